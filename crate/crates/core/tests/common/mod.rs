//! Shared generators and independent oracles for integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use weakdep::measures::{random_measure, DiscreteMeasure, DiscreteSpace, PathMeasure};

/// Random law on `k` points, strictly positive.
pub fn positive_measure(space: &Arc<DiscreteSpace>, rng: &mut ChaCha8Rng) -> DiscreteMeasure {
    let conc = [0.3, 1.0, 5.0][rng.gen_range(0..3)];
    random_measure(space.clone(), rng.gen(), conc).unwrap()
}

/// A law absolutely continuous w.r.t. `p`: an exponential tilt, a random
/// reweighting with some zeroed atoms, or a point mass on an atom of `p`.
pub fn continuous_wrt(p: &DiscreteMeasure, rng: &mut ChaCha8Rng) -> DiscreteMeasure {
    let w = p.weights();
    let k = w.len();
    let raw: Vec<f64> = match rng.gen_range(0..4) {
        0 => {
            let scale = [0.1, 1.0, 4.0][rng.gen_range(0..3)];
            w.iter().map(|x| x * (scale * rng.gen::<f64>()).exp()).collect()
        }
        1 => w
            .iter()
            .map(|x| if rng.gen_bool(0.3) { 0.0 } else { x * rng.gen::<f64>() })
            .collect(),
        2 => {
            let at = (0..k).filter(|&i| w[i] > 0.0).nth(0).unwrap();
            let at = (0..k).filter(|&i| w[i] > 0.0).nth(rng.gen_range(0..k)).unwrap_or(at);
            (0..k).map(|i| if i == at { 1.0 } else { 0.0 }).collect()
        }
        _ => w.iter().map(|x| x * rng.gen::<f64>()).collect(),
    };
    let mut raw = raw;
    if raw.iter().all(|x| *x == 0.0) {
        raw = w.to_vec();
    }
    normalized(p.space().clone(), raw)
}

pub fn normalized(space: Arc<DiscreteSpace>, raw: Vec<f64>) -> DiscreteMeasure {
    let t: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / t).collect();
    let drift = 1.0 - w.iter().sum::<f64>();
    let imax = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
    w[imax] += drift;
    DiscreteMeasure::new(space, w).unwrap()
}

pub fn single(m: &DiscreteMeasure) -> PathMeasure {
    PathMeasure::single(m)
}

/// Dense two-phase simplex with Bland's rule: minimize `c·x` s.t. `A x = b`,
/// `x ≥ 0`. Independent of the network simplex under test.
pub fn dense_lp(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    let (rows, cols) = (a.len(), c.len());
    // Phase one tableau with artificials.
    let width = cols + rows + 1;
    let mut t = vec![vec![0.0; width]; rows + 1];
    for i in 0..rows {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..cols {
            t[i][j] = sign * a[i][j];
        }
        t[i][cols + i] = 1.0;
        t[i][width - 1] = sign * b[i];
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();
    let phase = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, obj: &[f64], allowed: usize| {
        // objective row = obj - c_B B^-1 A
        let last = t.len() - 1;
        for j in 0..width {
            t[last][j] = if j < obj.len() { obj[j] } else { 0.0 };
        }
        for i in 0..last {
            let cb = if basis[i] < obj.len() { obj[basis[i]] } else { 0.0 };
            for j in 0..width {
                t[last][j] -= cb * t[i][j];
            }
        }
        loop {
            let enter = (0..allowed).find(|&j| t[last][j] < -1e-11);
            let Some(e) = enter else { break };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..last {
                if t[i][e] > 1e-12 {
                    let r = t[i][width - 1] / t[i][e];
                    match leave {
                        None => leave = Some((i, r)),
                        Some((li, lr)) => {
                            if r < lr - 1e-15 || (r <= lr + 1e-15 && basis[i] < basis[li]) {
                                leave = Some((i, r));
                            }
                        }
                    }
                }
            }
            let (l, _) = leave.expect("unbounded");
            let piv = t[l][e];
            for j in 0..width {
                t[l][j] /= piv;
            }
            for i in 0..=last {
                if i != l && t[i][e] != 0.0 {
                    let f = t[i][e];
                    for j in 0..width {
                        t[i][j] -= f * t[l][j];
                    }
                }
            }
            basis[l] = e;
        }
    };
    let mut art = vec![0.0; cols + rows];
    for v in art.iter_mut().skip(cols) {
        *v = 1.0;
    }
    phase(&mut t, &mut basis, &art, cols + rows);
    // Drive remaining artificials out where possible.
    for i in 0..rows {
        if basis[i] >= cols {
            if let Some(j) = (0..cols).find(|&j| t[i][j].abs() > 1e-9) {
                let piv = t[i][j];
                for k in 0..width {
                    t[i][k] /= piv;
                }
                for r in 0..=rows {
                    if r != i && t[r][j] != 0.0 {
                        let f = t[r][j];
                        for k in 0..width {
                            t[r][k] -= f * t[i][k];
                        }
                    }
                }
                basis[i] = j;
            }
        }
    }
    phase(&mut t, &mut basis, c, cols);
    (0..rows)
        .filter(|&i| basis[i] < cols)
        .map(|i| c[basis[i]] * t[i][width - 1])
        .sum()
}

/// Transport LP in dense form for [`dense_lp`].
pub fn dense_transport(p: &[f64], q: &[f64], cost: &[f64]) -> f64 {
    let (m, n) = (p.len(), q.len());
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..m {
        let mut row = vec![0.0; m * n];
        for j in 0..n {
            row[i * n + j] = 1.0;
        }
        a.push(row);
        b.push(p[i]);
    }
    for j in 0..n {
        let mut row = vec![0.0; m * n];
        for i in 0..m {
            row[i * n + j] = 1.0;
        }
        a.push(row);
        b.push(q[j]);
    }
    dense_lp(&a, &b, cost)
}

/// A random coupling of `a` and `b`: a mixture of the independent plan and
/// an optimal plan for a random cost.
pub fn random_coupling(a: &[f64], b: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cost: Vec<f64> = (0..a.len() * b.len()).map(|_| rng.gen::<f64>()).collect();
    let vertex = weakdep::transport::lp::solve_transport(a, b, &cost).unwrap().plan;
    let t = rng.gen::<f64>();
    let indep: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
    indep.iter().zip(&vertex).map(|(i, v)| t * i + (1.0 - t) * v).collect()
}

/// Random two-step law on `{0..m}²` as (first-step law, kernel rows).
pub fn random_two_step(m: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Vec<f64>>) {
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 0.05).collect();
        let t: f64 = raw.iter().sum();
        raw.iter().map(|v| v / t).collect()
    };
    let first = draw(rng);
    let rows = (0..m).map(|_| draw(rng)).collect();
    (first, rows)
}

/// A random Markov coupling on `E² × E²` of two two-step laws: a coupling
/// of the first steps times, for each pair of first states, a coupling of
/// the conditional laws of the second steps.
pub fn random_markov_coupling(
    x: &(Vec<f64>, Vec<Vec<f64>>),
    y: &(Vec<f64>, Vec<Vec<f64>>),
    rng: &mut ChaCha8Rng,
) -> weakdep::transport::Coupling {
    let m = x.0.len();
    let s = m * m;
    let first = random_coupling(&x.0, &y.0, rng);
    let mut weights = vec![0.0; s * s];
    for x1 in 0..m {
        for y1 in 0..m {
            let cond = random_coupling(&x.1[x1], &y.1[y1], rng);
            for x2 in 0..m {
                for y2 in 0..m {
                    weights[(x1 * m + x2) * s + y1 * m + y2] = first[x1 * m + y1] * cond[x2 * m + y2];
                }
            }
        }
    }
    weakdep::transport::Coupling { rows: s, cols: s, weights }
}

/// Law of the path `(X₁, X₂)` from a two-step description.
pub fn two_step_joint(x: &(Vec<f64>, Vec<Vec<f64>>)) -> Vec<f64> {
    let m = x.0.len();
    (0..m * m).map(|i| x.0[i / m] * x.1[i / m][i % m]).collect()
}
