//! Classical and weak optimal transport on finite (path) spaces.
//!
//! * [`wasserstein`] — exact `W_p` by the transportation simplex in [`lp`].
//! * [`weak_cost_fixed_alpha`] — the α-weighted cost, either over all
//!   couplings (one LP on `E^n × E^n`) or over Markov couplings (backward
//!   induction, one small LP per pair of histories).
//! * [`weak_transport_cost`] — the full weak cost with a certified
//!   `[lower, upper]` interval: lower bounds come from explicit weights α,
//!   upper bounds from explicit couplings.
//! * [`glue_markov`] — three-way gluing of two Markov couplings.
//! * [`inf_convolution`] / [`dual_form_check`] — the exponential dual form.

pub mod dual;
pub mod glue;
pub mod lp;
pub mod weak;

pub use dual::{dual_form_check, inf_convolution};
pub use glue::{glue_markov, GluedCoupling};
pub use weak::{
    weak_cost_fixed_alpha, weak_transport_cost, AlphaWeights, CertifiedValue, FixedAlphaCost,
    MarkovCoupling, SolverConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::measures::{DiscreteMeasure, Metric, PathMeasure};

/// A joint law on a product of two finite spaces, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

impl Coupling {
    pub fn independent(p: &[f64], q: &[f64]) -> Self {
        let weights = p.iter().flat_map(|a| q.iter().map(move |b| a * b)).collect();
        Self {
            rows: p.len(),
            cols: q.len(),
            weights,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.weights
            .chunks(self.cols)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.weights.chunks(self.cols) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w;
            }
        }
        out
    }

    /// Check both margins against `p` and `q` within `tol`.
    pub fn check_margins(&self, p: &[f64], q: &[f64], tol: f64) -> Result<()> {
        let close = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
        };
        if !close(&self.row_sums(), p) {
            return domain("coupling's first margin does not match");
        }
        if !close(&self.col_sums(), q) {
            return domain("coupling's second margin does not match");
        }
        if self.weights.iter().any(|w| *w < 0.0) {
            return domain("coupling has negative weights");
        }
        Ok(())
    }

    /// `E[g(X, Y)]`.
    pub fn expect(&self, g: impl Fn(usize, usize) -> f64) -> f64 {
        let mut total = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            if *w > 0.0 {
                total += w * g(k / self.cols, k % self.cols);
            }
        }
        total
    }
}

/// Exact `W_p` together with an optimal coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct Wasserstein {
    pub value: f64,
    pub coupling: Coupling,
}

/// `W_p(P, Q)` on a single space under `metric`.
pub fn wasserstein(p_meas: &DiscreteMeasure, q_meas: &DiscreteMeasure, p: f64, metric: &Metric) -> Result<Wasserstein> {
    if !p_meas.same_space(q_meas) {
        return domain("wasserstein distance needs both measures on one space");
    }
    let d = metric.matrix(p_meas.space())?;
    wasserstein_weights(p_meas.weights(), q_meas.weights(), &d, p)
}

/// `W_p` between two path laws under the combined metric `d_p`.
pub fn wasserstein_path(p_meas: &PathMeasure, q_meas: &PathMeasure, p: f64, metric: &Metric) -> Result<Wasserstein> {
    if p_meas.base() != q_meas.base() || p_meas.horizon() != q_meas.horizon() {
        return domain("wasserstein distance needs both path laws on one space");
    }
    check_exponent(p)?;
    let d = metric.matrix(p_meas.base())?;
    let size = p_meas.len();
    let paths: Vec<Vec<usize>> = (0..size).map(|i| p_meas.decode(i)).collect();
    let mut cost = vec![0.0; size * size];
    for x in 0..size {
        for y in 0..size {
            cost[x * size + y] = paths[x]
                .iter()
                .zip(&paths[y])
                .map(|(&a, &b)| d[a][b].powf(p))
                .sum();
        }
    }
    let (value, coupling) = solve_restricted(p_meas.weights(), q_meas.weights(), &cost)?;
    Ok(Wasserstein {
        value: value.max(0.0).powf(1.0 / p),
        coupling,
    })
}

/// `W_p` between weight vectors on one space with distance matrix `d`.
pub fn wasserstein_weights(p_w: &[f64], q_w: &[f64], d: &[Vec<f64>], p: f64) -> Result<Wasserstein> {
    check_exponent(p)?;
    let m = p_w.len();
    if q_w.len() != m || d.len() != m {
        return domain("dimension mismatch in wasserstein distance");
    }
    let cost: Vec<f64> = d.iter().flat_map(|row| row.iter().map(|c| c.powf(p))).collect();
    let (value, coupling) = solve_restricted(p_w, q_w, &cost)?;
    Ok(Wasserstein {
        value: value.max(0.0).powf(1.0 / p),
        coupling,
    })
}

fn check_exponent(p: f64) -> Result<()> {
    if !(1.0..=2.0).contains(&p) {
        return domain(format!("transport exponent must lie in [1, 2], got {p}"));
    }
    Ok(())
}

/// Solve the transport LP on the supports only and expand the plan back.
pub(crate) fn solve_restricted(p: &[f64], q: &[f64], cost: &[f64]) -> Result<(f64, Coupling)> {
    let (rows, cols) = (p.len(), q.len());
    let rs: Vec<usize> = (0..rows).filter(|&i| p[i] > 0.0).collect();
    let cs: Vec<usize> = (0..cols).filter(|&j| q[j] > 0.0).collect();
    let sub_cost: Vec<f64> = rs
        .iter()
        .flat_map(|&i| cs.iter().map(move |&j| cost[i * cols + j]))
        .collect();
    let supply: Vec<f64> = rs.iter().map(|&i| p[i]).collect();
    let demand: Vec<f64> = cs.iter().map(|&j| q[j]).collect();
    let sol = lp::solve_transport(&supply, &demand, &sub_cost).map_err(|e| match e {
        Error::Internal(msg) => Error::Internal(format!("transport LP: {msg}")),
        other => other,
    })?;
    let mut weights = vec![0.0; rows * cols];
    for (a, &i) in rs.iter().enumerate() {
        for (b, &j) in cs.iter().enumerate() {
            weights[i * cols + j] = sol.plan[a * cs.len() + b];
        }
    }
    Ok((sol.value, Coupling { rows, cols, weights }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::DiscreteSpace;
    use std::sync::Arc;

    #[test]
    fn wasserstein_examples() {
        let s = Arc::new(DiscreteSpace::indexed(2));
        let p = DiscreteMeasure::new(s.clone(), vec![0.5, 0.5]).unwrap();
        let q = DiscreteMeasure::new(s.clone(), vec![1.0, 0.0]).unwrap();
        assert_eq!(wasserstein(&p, &p, 2.0, &Metric::Hamming).unwrap().value, 0.0);
        let w = wasserstein(&p, &q, 1.0, &Metric::Hamming).unwrap();
        assert!((w.value - 0.5).abs() < 1e-15);
        w.coupling.check_margins(p.weights(), q.weights(), 1e-12).unwrap();

        let line = Arc::new(DiscreteSpace::on_line(&[0.0, 1.0]).unwrap());
        let a = DiscreteMeasure::point_mass(line.clone(), 0).unwrap();
        let b = DiscreteMeasure::point_mass(line, 1).unwrap();
        for p in [1.0, 1.5, 2.0] {
            assert!((wasserstein(&a, &b, p, &Metric::Euclidean).unwrap().value - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn one_parameter_family_brute_force() {
        // Couplings of two-point measures form a segment; scan it finely.
        let p = [0.3, 0.7];
        let q = [0.55, 0.45];
        let d = vec![vec![0.0, 2.0], vec![2.0, 0.0]];
        let exact = wasserstein_weights(&p, &q, &d, 1.0).unwrap().value;
        let lo = (p[0] - q[1]).max(0.0);
        let hi = p[0].min(q[0]);
        let best = (0..=100_000)
            .map(|k| {
                let t = lo + (hi - lo) * k as f64 / 100_000.0;
                2.0 * ((p[0] - t) + (q[0] - t))
            })
            .fold(f64::INFINITY, f64::min);
        assert!((exact - best).abs() < 1e-9);
    }

    #[test]
    fn exponent_out_of_range() {
        let d = vec![vec![0.0]];
        assert!(wasserstein_weights(&[1.0], &[1.0], &d, 3.0).is_err());
    }
}
