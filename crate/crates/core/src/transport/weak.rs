//! Weak transport costs with certified bounds.
//!
//! For path laws `P, Q` on `E^n`, weights `α = (α_j)` on `E^n` and a base
//! metric `d`, the fixed-weight cost is
//!
//! ```text
//! W~_α(P, Q) = inf_π Σ_j π[α_j(Y) d(X_j, Y_j)]
//! ```
//!
//! and the weak cost is `W~_p(P, Q) = sup_α W~_α(P, Q) / (Σ_j Q[α_j^q])^(1/q)`.
//!
//! Both bounds returned by [`weak_transport_cost`] are backed by explicit
//! witnesses. Any `α` gives a lower bound. Any coupling `π` gives the upper
//! bound `F(π) = (Σ_j Σ_y Q(y) e_j(y)^p)^(1/p)`, where
//! `e_j(y) = E_π[d(X_j, y_j) | Y = y]`, because the supremum over `α` for a
//! fixed `π` is an `ℓᵖ` norm by Hölder duality.
//!
//! `F^p` is convex in `π`, and its linearization at `π` is a fixed-weight
//! problem with `α_j = p e_j^(p-1)`. Frank–Wolfe iterations therefore
//! produce a coupling (upper bound) and, as a by-product, weights whose
//! ratio is a lower bound. At the optimum the two coincide.
//!
//! Over Markov couplings the feasible set is not convex. The upper bound
//! uses block-coordinate Frank–Wolfe over the per-history conditional
//! couplings from several starts, and the lower bound evaluates weights
//! by backward induction.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve_restricted, Coupling};
use crate::error::{domain, Error, Result};
use crate::measures::{decode_path, DiscreteSpace, Metric, PathMeasure};
use crate::rng::trial_rng;

/// Tuning knobs for [`weak_transport_cost`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Frank–Wolfe iterations on the full coupling polytope.
    pub fw_iterations: usize,
    /// Use away steps (linear convergence on polytopes).
    pub away_steps: bool,
    /// Projected supergradient iterations per restart.
    pub sga_iterations: usize,
    pub sga_restarts: usize,
    /// Initial supergradient step; iteration `t` uses `sga_step / sqrt(t)`.
    pub sga_step: f64,
    /// Starts for the Markov-coupling upper bound.
    pub multi_starts: usize,
    /// Maximum block-coordinate sweeps per Markov start.
    pub block_sweeps: usize,
    /// Target width of the certified interval.
    pub gap_tolerance: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            fw_iterations: 300,
            away_steps: true,
            sga_iterations: 500,
            sga_restarts: 5,
            sga_step: 1.0,
            multi_starts: 5,
            block_sweeps: 200,
            gap_tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// Nonnegative weights `α_j(y)` for each coordinate `j` and path `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaWeights {
    /// `values[j][y]`.
    pub values: Vec<Vec<f64>>,
    /// Conjugate exponent; `f64::INFINITY` when `p = 1`.
    pub q: f64,
}

impl AlphaWeights {
    pub fn new(values: Vec<Vec<f64>>, q: f64) -> Result<Self> {
        if !(q >= 1.0) {
            return domain("conjugate exponent must be at least 1");
        }
        if values.is_empty() {
            return domain("weights need at least one coordinate");
        }
        let len = values[0].len();
        if values.iter().any(|v| v.len() != len) {
            return domain("all coordinates need weights on the same points");
        }
        if values.iter().flatten().any(|a| !a.is_finite() || *a < 0.0) {
            return domain("weights must be finite and nonnegative");
        }
        Ok(Self { values, q })
    }

    pub fn constant(coords: usize, points: usize, value: f64, q: f64) -> Self {
        Self {
            values: vec![vec![value; points]; coords],
            q,
        }
    }

    /// `(Σ_j Q[α_j^q])^(1/q)`, or the `Q`-essential sup when `q = ∞`.
    pub fn norm(&self, q_weights: &[f64]) -> f64 {
        weighted_norm(&self.values, q_weights, self.q)
    }

    pub fn is_normalized(&self, q_weights: &[f64], tol: f64) -> bool {
        (self.norm(q_weights) - 1.0).abs() <= tol
    }

    /// Rescaled to unit norm; all-zero weights are returned unchanged.
    pub fn normalized(&self, q_weights: &[f64]) -> Self {
        let norm = self.norm(q_weights);
        if norm == 0.0 {
            return self.clone();
        }
        Self {
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|a| a / norm).collect())
                .collect(),
            q: self.q,
        }
    }
}

fn weighted_norm(values: &[Vec<f64>], q_weights: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        return values
            .iter()
            .flat_map(|v| v.iter().zip(q_weights).filter(|(_, w)| **w > 0.0).map(|(a, _)| *a))
            .fold(0.0, f64::max);
    }
    values
        .iter()
        .map(|v| {
            v.iter()
                .zip(q_weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(a, w)| w * a.powf(q))
                .sum::<f64>()
        })
        .sum::<f64>()
        .powf(1.0 / q)
}

/// Two-sided certificate for a weak transport cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedValue {
    pub lower: f64,
    pub upper: f64,
    /// Unit-norm weights attaining `lower`.
    pub alpha: AlphaWeights,
    /// Coupling attaining `upper` (on `E^n × E^n`).
    pub coupling: Coupling,
    /// Whether the infimum ranges over Markov couplings only.
    pub markov: bool,
    pub gap_closed: bool,
}

impl CertifiedValue {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Result of a fixed-weight solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedAlphaCost {
    pub value: f64,
    pub coupling: Coupling,
    /// Step-wise factors when the solve was restricted to Markov couplings.
    pub markov: Option<MarkovCoupling>,
}

/// A Markov coupling stored as per-history conditional couplings.
///
/// `blocks[k][hx * m^k + hy]` couples the laws of the `(k+1)`-th coordinates
/// given the length-`k` prefixes `hx` of `X` and `hy` of `Y`; it is an
/// `m x m` row-major plan, present for every pair of positive-probability
/// prefixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovCoupling {
    pub base: usize,
    pub horizon: usize,
    pub blocks: Vec<Vec<Option<Vec<f64>>>>,
}

impl MarkovCoupling {
    /// The joint law on `E^n × E^n` obtained by multiplying the factors.
    pub fn joint(&self) -> Coupling {
        let m = self.base;
        let mut w = vec![1.0];
        for k in 0..self.horizon {
            let width = m.pow(k as u32);
            let next_width = width * m;
            let mut next = vec![0.0; next_width * next_width];
            for hx in 0..width {
                for hy in 0..width {
                    let mass = w[hx * width + hy];
                    if mass == 0.0 {
                        continue;
                    }
                    let Some(block) = &self.blocks[k][hx * width + hy] else {
                        continue;
                    };
                    for a in 0..m {
                        for b in 0..m {
                            next[(hx * m + a) * next_width + hy * m + b] = mass * block[a * m + b];
                        }
                    }
                }
            }
            w = next;
        }
        let size = m.pow(self.horizon as u32);
        Coupling {
            rows: size,
            cols: size,
            weights: w,
        }
    }

    fn factor(&self, level: usize, x: &[usize], y: &[usize]) -> f64 {
        let m = self.base;
        let width = m.pow(level as u32);
        let hx = x[..level].iter().fold(0, |acc, &c| acc * m + c);
        let hy = y[..level].iter().fold(0, |acc, &c| acc * m + c);
        match &self.blocks[level][hx * width + hy] {
            Some(block) => block[x[level] * m + y[level]],
            None => 0.0,
        }
    }
}

/// Shared data of one transport instance on `E^n`.
struct Instance {
    m: usize,
    n: usize,
    size: usize,
    p: Vec<f64>,
    q: Vec<f64>,
    paths: Vec<Vec<usize>>,
    /// `coord[j][x * size + y] = d(x_j, y_j)`.
    coord: Vec<Vec<f64>>,
    p_steps: Vec<Vec<Option<Vec<f64>>>>,
    q_steps: Vec<Vec<Option<Vec<f64>>>>,
}

impl Instance {
    fn new(p_meas: &PathMeasure, q_meas: &PathMeasure, metric: &Metric) -> Result<Self> {
        if p_meas.base() != q_meas.base() || p_meas.horizon() != q_meas.horizon() {
            return domain("weak transport needs both path laws on one space");
        }
        let base: &Arc<DiscreteSpace> = p_meas.base();
        let d = metric.matrix(base)?;
        let m = base.len();
        let n = p_meas.horizon();
        let size = p_meas.len();
        let paths: Vec<Vec<usize>> = (0..size).map(|i| decode_path(i, m, n)).collect();
        let coord = (0..n)
            .map(|j| {
                let mut t = vec![0.0; size * size];
                for x in 0..size {
                    for y in 0..size {
                        t[x * size + y] = d[paths[x][j]][paths[y][j]];
                    }
                }
                t
            })
            .collect();
        Ok(Self {
            m,
            n,
            size,
            p: p_meas.weights().to_vec(),
            q: q_meas.weights().to_vec(),
            paths,
            coord,
            p_steps: step_laws(p_meas.weights(), m, n),
            q_steps: step_laws(q_meas.weights(), m, n),
        })
    }

    fn alpha_cost(&self, alpha: &[Vec<f64>]) -> Vec<f64> {
        let mut cost = vec![0.0; self.size * self.size];
        for (j, a) in alpha.iter().enumerate() {
            for x in 0..self.size {
                for y in 0..self.size {
                    cost[x * self.size + y] += a[y] * self.coord[j][x * self.size + y];
                }
            }
        }
        cost
    }

    fn power_cost(&self, p: f64) -> Vec<f64> {
        let mut cost = vec![0.0; self.size * self.size];
        for t in &self.coord {
            for (c, d) in cost.iter_mut().zip(t) {
                *c += d.powf(p);
            }
        }
        cost
    }

    /// `s[j][y] = Σ_x π(x, y) d(x_j, y_j)`.
    fn column_costs(&self, pi: &[f64]) -> Vec<Vec<f64>> {
        self.coord
            .iter()
            .map(|t| {
                let mut s = vec![0.0; self.size];
                for x in 0..self.size {
                    let row = &pi[x * self.size..(x + 1) * self.size];
                    let trow = &t[x * self.size..(x + 1) * self.size];
                    for y in 0..self.size {
                        s[y] += row[y] * trow[y];
                    }
                }
                s
            })
            .collect()
    }

    /// Optimal Markov coupling for an arbitrary terminal cost on path pairs.
    fn markov_solve(&self, terminal: &[f64]) -> Result<(f64, MarkovCoupling)> {
        let mut blocks: Vec<Vec<Option<Vec<f64>>>> = (0..self.n)
            .map(|k| vec![None; self.m.pow(2 * k as u32)])
            .collect();
        let value = self.markov_rec(0, 0, 0, terminal, &mut blocks)?;
        Ok((
            value,
            MarkovCoupling {
                base: self.m,
                horizon: self.n,
                blocks,
            },
        ))
    }

    fn markov_rec(
        &self,
        k: usize,
        hx: usize,
        hy: usize,
        terminal: &[f64],
        blocks: &mut [Vec<Option<Vec<f64>>>],
    ) -> Result<f64> {
        if k == self.n {
            return Ok(terminal[hx * self.size + hy]);
        }
        let m = self.m;
        let pc = self.p_steps[k][hx]
            .as_ref()
            .ok_or_else(|| Error::Internal("visited a null prefix of P".into()))?;
        let qc = self.q_steps[k][hy]
            .as_ref()
            .ok_or_else(|| Error::Internal("visited a null prefix of Q".into()))?;
        let mut cost = vec![0.0; m * m];
        for a in 0..m {
            if pc[a] <= 0.0 {
                continue;
            }
            for b in 0..m {
                if qc[b] > 0.0 {
                    cost[a * m + b] =
                        self.markov_rec(k + 1, hx * m + a, hy * m + b, terminal, blocks)?;
                }
            }
        }
        let (value, plan) = solve_restricted(pc, qc, &cost)?;
        blocks[k][hx * m.pow(k as u32) + hy] = Some(plan.weights);
        Ok(value)
    }

    fn independent_markov(&self) -> MarkovCoupling {
        let m = self.m;
        let blocks = (0..self.n)
            .map(|k| {
                let width = m.pow(k as u32);
                let mut level = vec![None; width * width];
                for hx in 0..width {
                    for hy in 0..width {
                        if let (Some(pc), Some(qc)) = (&self.p_steps[k][hx], &self.q_steps[k][hy]) {
                            level[hx * width + hy] = Some(Coupling::independent(pc, qc).weights);
                        }
                    }
                }
                level
            })
            .collect();
        MarkovCoupling {
            base: m,
            horizon: self.n,
            blocks,
        }
    }
}

/// `steps[k][prefix]` = law of coordinate `k+1` given a length-`k` prefix.
fn step_laws(joint: &[f64], m: usize, n: usize) -> Vec<Vec<Option<Vec<f64>>>> {
    let mut marg = vec![joint.to_vec()];
    for _ in 0..n {
        let last = marg.last().unwrap();
        marg.push(last.chunks(m).map(|c| c.iter().sum()).collect());
    }
    marg.reverse(); // marg[k] lives on prefixes of length k
    (0..n)
        .map(|k| {
            (0..m.pow(k as u32))
                .map(|h| {
                    let mass = marg[k][h];
                    (mass > 0.0).then(|| {
                        (0..m).map(|a| marg[k + 1][h * m + a] / mass).collect()
                    })
                })
                .collect()
        })
        .collect()
}

fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

/// `inf_π Σ_j π[α_j(Y) d(X_j, Y_j)]` over all couplings, or over Markov
/// couplings when `markov` is set (solved exactly by backward induction).
pub fn weak_cost_fixed_alpha(
    p_meas: &PathMeasure,
    q_meas: &PathMeasure,
    alpha: &AlphaWeights,
    metric: &Metric,
    markov: bool,
) -> Result<FixedAlphaCost> {
    let inst = Instance::new(p_meas, q_meas, metric)?;
    if alpha.values.len() != inst.n || alpha.values.iter().any(|v| v.len() != inst.size) {
        return domain(format!(
            "weights must have {} coordinates over {} paths",
            inst.n, inst.size
        ));
    }
    if alpha.values.iter().flatten().any(|a| !a.is_finite() || *a < 0.0) {
        return domain("weights must be finite and nonnegative");
    }
    fixed_alpha(&inst, &alpha.values, markov)
}

fn fixed_alpha(inst: &Instance, alpha: &[Vec<f64>], markov: bool) -> Result<FixedAlphaCost> {
    let cost = inst.alpha_cost(alpha);
    if markov && inst.n > 1 {
        let (value, mc) = inst.markov_solve(&cost)?;
        Ok(FixedAlphaCost {
            value,
            coupling: mc.joint(),
            markov: Some(mc),
        })
    } else {
        let (value, coupling) = solve_restricted(&inst.p, &inst.q, &cost)?;
        Ok(FixedAlphaCost {
            value,
            coupling,
            markov: None,
        })
    }
}

/// The weak cost `W~_p(P, Q)` with a certified interval.
///
/// `p` must lie in `[1, 2]`. For `p = 1` the supremum is attained at
/// `α ≡ 1` and the interval collapses to the exact value.
pub fn weak_transport_cost(
    p_meas: &PathMeasure,
    q_meas: &PathMeasure,
    p: f64,
    metric: &Metric,
    markov: bool,
    cfg: &SolverConfig,
) -> Result<CertifiedValue> {
    if !(1.0..=2.0).contains(&p) {
        return domain(format!("weak transport exponent must lie in [1, 2], got {p}"));
    }
    let inst = Instance::new(p_meas, q_meas, metric)?;
    let markov = markov && inst.n > 1;
    let q = conjugate(p);
    if p == 1.0 {
        let ones = vec![vec![1.0; inst.size]; inst.n];
        let sol = fixed_alpha(&inst, &ones, markov)?;
        return Ok(CertifiedValue {
            lower: sol.value,
            upper: sol.value,
            alpha: AlphaWeights { values: ones, q },
            coupling: sol.coupling,
            markov,
            gap_closed: true,
        });
    }
    let obj = Objective { inst: &inst, p };
    let (mut best, coupling) = if markov {
        markov_upper(&obj, cfg)?
    } else {
        let start = solve_restricted(&inst.p, &inst.q, &inst.power_cost(p))?.1;
        frank_wolfe(&obj, start.weights, cfg)?
    };
    if best.upper - best.lower > cfg.gap_tolerance {
        supergradient_ascent(&obj, markov, cfg, &mut best)?;
    }
    let alpha = AlphaWeights {
        values: best.alpha,
        q,
    }
    .normalized(&inst.q);
    Ok(CertifiedValue {
        lower: best.lower,
        upper: best.upper,
        alpha,
        coupling: Coupling {
            rows: inst.size,
            cols: inst.size,
            weights: coupling,
        },
        markov,
        gap_closed: best.upper - best.lower <= cfg.gap_tolerance,
    })
}

/// Running best bounds; `alpha` attains `lower`.
struct Bounds {
    lower: f64,
    upper: f64,
    alpha: Vec<Vec<f64>>,
}

/// `G(π) = Σ_j Σ_y Q(y)^(1-p) s_j(y)^p = F(π)^p`.
struct Objective<'a> {
    inst: &'a Instance,
    p: f64,
}

impl Objective<'_> {
    fn value(&self, s: &[Vec<f64>]) -> f64 {
        let q = &self.inst.q;
        s.iter()
            .map(|sj| {
                sj.iter()
                    .zip(q)
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(v, w)| w.powf(1.0 - self.p) * v.max(0.0).powf(self.p))
                    .sum::<f64>()
            })
            .sum()
    }

    /// `e_j(y)^(p-1)`: unnormalized optimal weights for the linearization.
    fn alpha(&self, s: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let q = &self.inst.q;
        s.iter()
            .map(|sj| {
                sj.iter()
                    .zip(q)
                    .map(|(v, w)| {
                        if *w > 0.0 {
                            (v.max(0.0) / w).powf(self.p - 1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Lower bound `W~_α / ||α||_q` for `α = e^(p-1)` given `W~_α`.
    fn ratio(&self, phi: f64, alpha: &[Vec<f64>]) -> f64 {
        let norm = weighted_norm(alpha, &self.inst.q, conjugate(self.p));
        if norm > 0.0 {
            phi / norm
        } else {
            0.0
        }
    }

    /// Minimize `G` along `s + γ ds` for `γ ∈ [0, max]`.
    fn line_search(&self, s: &[Vec<f64>], ds: &[Vec<f64>], max: f64) -> f64 {
        let q = &self.inst.q;
        let terms = || {
            s.iter().zip(ds).flat_map(|(sj, dj)| {
                sj.iter()
                    .zip(dj)
                    .zip(q)
                    .filter(|(_, w)| **w > 0.0)
                    .map(|((a, b), w)| (*a, *b, *w))
            })
        };
        if self.p == 2.0 {
            let (num, den) = terms().fold((0.0, 0.0), |(n, d), (a, b, w)| (n + a * b / w, d + b * b / w));
            if den <= 0.0 {
                return 0.0;
            }
            return (-num / den).clamp(0.0, max);
        }
        let p = self.p;
        let deriv = |g: f64| -> f64 {
            terms()
                .map(|(a, b, w)| w.powf(1.0 - p) * (a + g * b).max(0.0).powf(p - 1.0) * b)
                .sum()
        };
        if deriv(0.0) >= 0.0 {
            return 0.0;
        }
        if deriv(max) <= 0.0 {
            return max;
        }
        let (mut lo, mut hi) = (0.0, max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if deriv(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Away-step Frank–Wolfe over the coupling polytope starting at a vertex.
fn frank_wolfe(obj: &Objective, start: Vec<f64>, cfg: &SolverConfig) -> Result<(Bounds, Vec<f64>)> {
    let inst = obj.inst;
    let size = inst.size;
    let p = obj.p;
    let mut pi = start.clone();
    let mut active: Vec<(Vec<f64>, f64)> = vec![(start, 1.0)];
    let mut best = Bounds {
        lower: 0.0,
        upper: f64::INFINITY,
        alpha: vec![vec![0.0; size]; inst.n],
    };
    let mut best_pi = pi.clone();
    for _ in 0..=cfg.fw_iterations {
        let s = inst.column_costs(&pi);
        let g = obj.value(&s);
        let upper = g.max(0.0).powf(1.0 / p);
        if upper < best.upper {
            best.upper = upper;
            best_pi.clone_from(&pi);
        }
        if g <= 0.0 {
            best.lower = 0.0;
            break;
        }
        let alpha = obj.alpha(&s);
        let cost = inst.alpha_cost(&alpha);
        let (phi, vertex) = solve_restricted(&inst.p, &inst.q, &cost)?;
        let lower = obj.ratio(phi, &alpha);
        if lower > best.lower {
            best.lower = lower;
            best.alpha = alpha;
        }
        if best.upper - best.lower <= 1e-13 * (1.0 + best.upper) {
            break;
        }
        let dot = |v: &[f64]| v.iter().zip(&cost).map(|(a, b)| a * b).sum::<f64>();
        let at_pi = dot(&pi);
        let fw_slope = phi - at_pi;
        let away = if cfg.away_steps {
            active
                .iter()
                .enumerate()
                .map(|(i, (v, _))| (i, dot(v)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        } else {
            None
        };
        let use_away = matches!(away, Some((i, val)) if at_pi - val < fw_slope && active[i].1 < 1.0);
        let (dir, max_step) = if use_away {
            let (i, _) = away.unwrap();
            let w = active[i].1;
            let d: Vec<f64> = pi.iter().zip(&active[i].0).map(|(a, b)| a - b).collect();
            (d, w / (1.0 - w))
        } else {
            let d: Vec<f64> = vertex.weights.iter().zip(&pi).map(|(a, b)| a - b).collect();
            (d, 1.0)
        };
        let ds = inst.column_costs(&dir);
        let gamma = obj.line_search(&s, &ds, max_step);
        if gamma <= 0.0 {
            break;
        }
        for (a, d) in pi.iter_mut().zip(&dir) {
            *a = (*a + gamma * d).max(0.0);
        }
        if use_away {
            let (i, _) = away.unwrap();
            for entry in active.iter_mut() {
                entry.1 *= 1.0 + gamma;
            }
            active[i].1 -= gamma;
            if gamma >= max_step || active[i].1 <= 1e-15 {
                active.remove(i);
            }
        } else {
            for entry in active.iter_mut() {
                entry.1 *= 1.0 - gamma;
            }
            match active.iter().position(|(v, _)| same_vertex(v, &vertex.weights)) {
                Some(i) => active[i].1 += gamma,
                None => active.push((vertex.weights, gamma)),
            }
            if gamma >= 1.0 {
                active.retain(|(_, w)| *w > 0.0);
            }
        }
    }
    Ok((best, best_pi))
}

fn same_vertex(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-14)
}

/// Upper bound over Markov couplings by block-coordinate Frank–Wolfe.
fn markov_upper(obj: &Objective, cfg: &SolverConfig) -> Result<(Bounds, Vec<f64>)> {
    let inst = obj.inst;
    let starts = cfg.multi_starts.max(1);
    let results: Vec<Result<(f64, MarkovCoupling)>> = (0..starts)
        .into_par_iter()
        .map(|k| {
            let start = match k {
                0 => inst.markov_solve(&inst.power_cost(obj.p))?.1,
                1 => inst.independent_markov(),
                _ => {
                    let mut rng = trial_rng(cfg.seed, k as u64);
                    let alpha: Vec<Vec<f64>> = (0..inst.n)
                        .map(|_| (0..inst.size).map(|_| rng.gen::<f64>()).collect())
                        .collect();
                    inst.markov_solve(&inst.alpha_cost(&alpha))?.1
                }
            };
            block_descent(obj, start, cfg.block_sweeps)
        })
        .collect();
    let mut best: Option<(f64, MarkovCoupling)> = None;
    for r in results {
        let (g, mc) = r?;
        if best.as_ref().map_or(true, |(bg, _)| g < *bg) {
            best = Some((g, mc));
        }
    }
    let (g, mc) = best.ok_or_else(|| Error::Internal("no Markov start".into()))?;
    let pi = mc.joint().weights;
    let upper = g.max(0.0).powf(1.0 / obj.p);
    let s = inst.column_costs(&pi);
    let alpha = obj.alpha(&s);
    let lower = if g > 0.0 {
        let (phi, _) = inst.markov_solve(&inst.alpha_cost(&alpha))?;
        obj.ratio(phi, &alpha).min(upper)
    } else {
        0.0
    };
    Ok((
        Bounds {
            lower,
            upper,
            alpha,
        },
        pi,
    ))
}

/// Repeated sweeps of exact-line-search Frank–Wolfe steps on each block.
fn block_descent(obj: &Objective, mut mc: MarkovCoupling, sweeps: usize) -> Result<(f64, MarkovCoupling)> {
    let inst = obj.inst;
    let (m, n, size) = (inst.m, inst.n, inst.size);
    let mut pi = mc.joint().weights;
    let mut s = inst.column_costs(&pi);
    let mut g = obj.value(&s);
    for _ in 0..sweeps {
        let before = g;
        for k in 0..n {
            let width = m.pow(k as u32);
            let tail_len = m.pow((n - k) as u32);
            for hx in 0..width {
                for hy in 0..width {
                    if mc.blocks[k][hx * width + hy].is_none() {
                        continue;
                    }
                    let x_range = hx * tail_len..(hx + 1) * tail_len;
                    let y_range = hy * tail_len..(hy + 1) * tail_len;
                    let prefix = {
                        let (x, y) = (&inst.paths[x_range.start], &inst.paths[y_range.start]);
                        (0..k).map(|l| mc.factor(l, x, y)).product::<f64>()
                    };
                    if prefix == 0.0 {
                        continue;
                    }
                    // Downstream products for every pair extending this block.
                    let mut tails = Vec::with_capacity(tail_len * tail_len);
                    for x in x_range.clone() {
                        for y in y_range.clone() {
                            let (px, py) = (&inst.paths[x], &inst.paths[y]);
                            let t: f64 = (k + 1..n).map(|l| mc.factor(l, px, py)).product();
                            tails.push((x, y, (px[k] * m + py[k]), t));
                        }
                    }
                    let pc = inst.p_steps[k][hx].as_ref().unwrap();
                    let qc = inst.q_steps[k][hy].as_ref().unwrap();
                    for _ in 0..3 {
                        let alpha = obj.alpha(&s);
                        let mut grad = vec![0.0; m * m];
                        for &(x, y, cell, t) in &tails {
                            if t == 0.0 {
                                continue;
                            }
                            let gxy: f64 = (0..n)
                                .map(|j| alpha[j][y] * inst.coord[j][x * size + y])
                                .sum();
                            grad[cell] += prefix * t * gxy;
                        }
                        let (_, vertex) = solve_restricted(pc, qc, &grad)?;
                        let block = mc.blocks[k][hx * width + hy].as_mut().unwrap();
                        let dir: Vec<f64> = vertex.weights.iter().zip(block.iter()).map(|(a, b)| a - b).collect();
                        let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
                        if slope >= -1e-15 * (1.0 + g) {
                            break;
                        }
                        let mut ds = vec![vec![0.0; size]; n];
                        for &(x, y, cell, t) in &tails {
                            let dpi = prefix * dir[cell] * t;
                            if dpi != 0.0 {
                                for j in 0..n {
                                    ds[j][y] += dpi * inst.coord[j][x * size + y];
                                }
                            }
                        }
                        let gamma = obj.line_search(&s, &ds, 1.0);
                        if gamma <= 0.0 {
                            break;
                        }
                        for (b, d) in block.iter_mut().zip(&dir) {
                            *b = (*b + gamma * d).max(0.0);
                        }
                        for (sj, dj) in s.iter_mut().zip(&ds) {
                            for (a, b) in sj.iter_mut().zip(dj) {
                                *a += gamma * b;
                            }
                        }
                        g = obj.value(&s);
                    }
                }
            }
        }
        // Resynchronize to avoid drift from incremental updates.
        pi = mc.joint().weights;
        s = inst.column_costs(&pi);
        g = obj.value(&s);
        if before - g <= 1e-14 * (1.0 + g) {
            break;
        }
    }
    Ok((g, mc))
}

/// Projected supergradient ascent on `α ↦ W~_α` over the unit `q`-sphere.
fn supergradient_ascent(obj: &Objective, markov: bool, cfg: &SolverConfig, best: &mut Bounds) -> Result<()> {
    let inst = obj.inst;
    let q = conjugate(obj.p);
    let upper = best.upper;
    let seed_alpha = best.alpha.clone();
    let runs: Vec<Result<(f64, Vec<Vec<f64>>)>> = (0..cfg.sga_restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut alpha = if r == 0 {
                seed_alpha.clone()
            } else {
                let mut rng = trial_rng(cfg.seed ^ 0x5ca1ab1e, r as u64);
                (0..inst.n)
                    .map(|_| {
                        (0..inst.size)
                            .map(|y| if inst.q[y] > 0.0 { rng.gen::<f64>() } else { 0.0 })
                            .collect()
                    })
                    .collect()
            };
            project(&mut alpha, &inst.q, q);
            let mut run_best = (0.0, alpha.clone());
            for t in 1..=cfg.sga_iterations {
                let sol = fixed_alpha(inst, &alpha, markov)?;
                let norm = weighted_norm(&alpha, &inst.q, q);
                let value = if norm > 0.0 { sol.value / norm } else { 0.0 };
                if value > run_best.0 {
                    run_best = (value, alpha.clone());
                }
                if upper - run_best.0 <= cfg.gap_tolerance * 1e-2 {
                    break;
                }
                let s = inst.column_costs(&sol.coupling.weights);
                let step = cfg.sga_step / (t as f64).sqrt();
                for (j, aj) in alpha.iter_mut().enumerate() {
                    for (y, a) in aj.iter_mut().enumerate() {
                        if inst.q[y] > 0.0 {
                            *a += step * s[j][y] / inst.q[y];
                        }
                    }
                }
                project(&mut alpha, &inst.q, q);
            }
            Ok(run_best)
        })
        .collect();
    for r in runs {
        let (value, alpha) = r?;
        if value > best.lower {
            best.lower = value.min(best.upper);
            best.alpha = alpha;
        }
    }
    Ok(())
}

/// Clip negatives and rescale onto the unit sphere of the weighted norm.
fn project(alpha: &mut [Vec<f64>], q_weights: &[f64], q: f64) {
    for a in alpha.iter_mut().flatten() {
        *a = a.max(0.0);
    }
    let mut norm = weighted_norm(alpha, q_weights, q);
    if norm == 0.0 {
        for aj in alpha.iter_mut() {
            for (a, w) in aj.iter_mut().zip(q_weights) {
                *a = if *w > 0.0 { 1.0 } else { 0.0 };
            }
        }
        norm = weighted_norm(alpha, q_weights, q);
    }
    for a in alpha.iter_mut().flatten() {
        *a /= norm;
    }
}
