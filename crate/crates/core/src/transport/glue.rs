//! Gluing two Markov couplings of length-two paths along a shared margin.
//!
//! Given `π_xy` coupling `P` with `Q` and `π_yz` coupling `Q` with `R`, the
//! glued law of `(X, Y, Z)` is built step by step as
//!
//! ```text
//! step 1:  π(x₁ | y₁) π(z₁ | y₁) Q(y₁)
//! step 2:  π(x₂ | x₁, y₁, y₂) π(z₂ | y₁, z₁, y₂) Q(y₂ | y₁)
//! ```
//!
//! so `X` and `Z` are conditionally independent given `Y` and both input
//! couplings are recovered as margins.

use super::Coupling;
use crate::error::{domain, Result};

const TOL: f64 = 1e-9;

/// Joint law of three length-two paths, index `(x * M + y) * M + z` with `M = m²`.
#[derive(Debug, Clone, PartialEq)]
pub struct GluedCoupling {
    pub base: usize,
    pub weights: Vec<f64>,
}

impl GluedCoupling {
    fn side(&self) -> usize {
        self.base * self.base
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        let s = self.side();
        self.weights[(x * s + y) * s + z]
    }

    fn margin(&self, keep: impl Fn(usize, usize, usize) -> (usize, usize)) -> Coupling {
        let s = self.side();
        let mut weights = vec![0.0; s * s];
        for x in 0..s {
            for y in 0..s {
                for z in 0..s {
                    let (a, b) = keep(x, y, z);
                    weights[a * s + b] += self.get(x, y, z);
                }
            }
        }
        Coupling { rows: s, cols: s, weights }
    }

    pub fn xy(&self) -> Coupling {
        self.margin(|x, y, _| (x, y))
    }

    pub fn yz(&self) -> Coupling {
        self.margin(|_, y, z| (y, z))
    }

    pub fn xz(&self) -> Coupling {
        self.margin(|x, _, z| (x, z))
    }

    /// `max |π(x,z|y) − π(x|y) π(z|y)|` over `y` of positive probability.
    pub fn conditional_independence_error(&self) -> f64 {
        let s = self.side();
        let xy = self.xy();
        let yz = self.yz();
        let qy = xy.col_sums();
        let mut worst = 0.0f64;
        for y in 0..s {
            if qy[y] <= 0.0 {
                continue;
            }
            for x in 0..s {
                for z in 0..s {
                    let joint = self.get(x, y, z) / qy[y];
                    let prod = (xy.get(x, y) / qy[y]) * (yz.get(y, z) / qy[y]);
                    worst = worst.max((joint - prod).abs());
                }
            }
        }
        worst
    }
}

/// Step-one margin of a coupling of length-two paths.
fn first_step(pi: &Coupling, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * m];
    for a in 0..m * m {
        for b in 0..m * m {
            out[(a / m) * m + b / m] += pi.get(a, b);
        }
    }
    out
}

/// Verify that the step-two conditional couples the step-two laws.
fn check_markov(pi: &Coupling, m: usize, name: &str) -> Result<()> {
    let rows = pi.row_sums();
    let cols = pi.col_sums();
    let step = first_step(pi, m);
    let law = |marg: &[f64], h: usize, a: usize| {
        let tot: f64 = (0..m).map(|c| marg[h * m + c]).sum();
        if tot > 0.0 {
            marg[h * m + a] / tot
        } else {
            0.0
        }
    };
    for h1 in 0..m {
        for g1 in 0..m {
            let mass = step[h1 * m + g1];
            if mass <= 0.0 {
                continue;
            }
            for a in 0..m {
                let row: f64 = (0..m).map(|b| pi.get(h1 * m + a, g1 * m + b)).sum::<f64>() / mass;
                let col: f64 = (0..m).map(|b| pi.get(h1 * m + b, g1 * m + a)).sum::<f64>() / mass;
                if (row - law(&rows, h1, a)).abs() > TOL || (col - law(&cols, g1, a)).abs() > TOL {
                    return domain(format!("{name} is not a Markov coupling"));
                }
            }
        }
    }
    Ok(())
}

/// Glue `π_xy` and `π_yz` (both on `E² × E²`, base size `m`).
pub fn glue_markov(pi_xy: &Coupling, pi_yz: &Coupling, m: usize) -> Result<GluedCoupling> {
    let s = m * m;
    for (pi, name) in [(pi_xy, "first coupling"), (pi_yz, "second coupling")] {
        if pi.rows != s || pi.cols != s {
            return domain(format!("{name} must live on E^2 x E^2 with |E| = {m}"));
        }
    }
    let q = pi_xy.col_sums();
    let q2 = pi_yz.row_sums();
    if q.iter().zip(&q2).any(|(a, b)| (a - b).abs() > TOL) {
        return domain("couplings disagree on the shared margin");
    }
    check_markov(pi_xy, m, "first coupling")?;
    check_markov(pi_yz, m, "second coupling")?;

    let step_xy = first_step(pi_xy, m);
    let step_yz = first_step(pi_yz, m);
    let q1: Vec<f64> = (0..m).map(|a| (0..m).map(|b| q[a * m + b]).sum()).collect();
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };

    let mut weights = vec![0.0; s * s * s];
    for y in 0..s {
        let y1 = y / m;
        let qy2 = ratio(q[y], q1[y1]);
        for x in 0..s {
            let (x1, x2) = (x / m, x % m);
            let x1_given_y1 = ratio(step_xy[x1 * m + y1], q1[y1]);
            let norm_x: f64 = (0..m).map(|c| pi_xy.get(x1 * m + c, y)).sum();
            let x2_given = ratio(pi_xy.get(x1 * m + x2, y), norm_x);
            for z in 0..s {
                let (z1, z2) = (z / m, z % m);
                let z1_given_y1 = ratio(step_yz[y1 * m + z1], q1[y1]);
                let norm_z: f64 = (0..m).map(|c| pi_yz.get(y, z1 * m + c)).sum();
                let z2_given = ratio(pi_yz.get(y, z1 * m + z2), norm_z);
                weights[(x * s + y) * s + z] =
                    x1_given_y1 * z1_given_y1 * q1[y1] * x2_given * z2_given * qy2;
            }
        }
    }
    Ok(GluedCoupling { base: m, weights })
}
