//! Exact transportation-problem solver.
//!
//! A primal network simplex (the MODI / u-v method) on the bipartite
//! supply-demand graph. The basis is always a spanning tree with exactly
//! `m + n - 1` cells, degenerate zero cells included, so potentials are
//! well defined at every step. Entering and leaving cells are chosen by
//! lexicographic (Bland) order, which both prevents cycling and makes the
//! returned optimum reproducible when several exist.

use crate::error::{Error, Result};

/// Optimal plan with its value and a dual certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportSolution {
    /// Row-major `supply.len() x demand.len()` plan.
    pub plan: Vec<f64>,
    pub value: f64,
    /// Row potentials; `u_i + v_j <= c_ij` within tolerance at optimality.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

const MAX_PIVOTS: usize = 100_000;

/// Minimize `Σ plan_ij cost_ij` over plans with the given row and column sums.
///
/// `cost` is row-major. Supplies and demands must be nonnegative with equal
/// totals (within `1e-9`).
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportSolution> {
    let m = supply.len();
    let n = demand.len();
    if m == 0 || n == 0 {
        return Err(Error::Domain("transport problem needs nonempty margins".into()));
    }
    if cost.len() != m * n {
        return Err(Error::Domain(format!(
            "cost has {} entries for a {m}x{n} problem",
            cost.len()
        )));
    }
    if supply.iter().chain(demand).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Domain("margins must be finite and nonnegative".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain("costs must be finite".into()));
    }
    let ts: f64 = supply.iter().sum();
    let td: f64 = demand.iter().sum();
    if (ts - td).abs() > 1e-9 {
        return Err(Error::Internal(format!(
            "unbalanced margins: supply {ts}, demand {td}"
        )));
    }

    let mut plan = vec![0.0; m * n];
    let mut basic = vec![false; m * n];
    north_west_corner(supply, demand, &mut plan, &mut basic);

    let scale = cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let tol = 1e-12 * (1.0 + scale);
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];

    for _ in 0..MAX_PIVOTS {
        potentials(m, n, cost, &basic, &mut u, &mut v)?;
        // Bland: first improving nonbasic cell in row-major order.
        let entering = (0..m * n).find(|&k| !basic[k] && cost[k] - u[k / n] - v[k % n] < -tol);
        let Some(enter) = entering else {
            let value = plan.iter().zip(cost).map(|(x, c)| x * c).sum();
            return Ok(TransportSolution { plan, value, u, v });
        };
        let cycle = tree_path(m, n, &basic, enter / n, enter % n)?;
        // cycle[0] is the entering cell (+), then alternating -, +, ...
        let leave = cycle
            .iter()
            .skip(1)
            .step_by(2)
            .copied()
            .min_by(|&a, &b| plan[a].total_cmp(&plan[b]).then(a.cmp(&b)))
            .ok_or_else(|| Error::Internal("empty pivot cycle".into()))?;
        let theta = plan[leave];
        for (pos, &cell) in cycle.iter().enumerate() {
            if pos % 2 == 0 {
                plan[cell] += theta;
            } else {
                plan[cell] = (plan[cell] - theta).max(0.0);
            }
        }
        plan[leave] = 0.0;
        basic[leave] = false;
        basic[enter] = true;
    }
    Err(Error::Numeric("transport simplex hit the pivot limit".into()))
}

fn north_west_corner(supply: &[f64], demand: &[f64], plan: &mut [f64], basic: &mut [bool]) {
    let (m, n) = (supply.len(), demand.len());
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let x = s[i].min(d[j]);
        plan[i * n + j] = x;
        basic[i * n + j] = true;
        s[i] -= x;
        d[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if j == n - 1 || (i < m - 1 && s[i] <= d[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
    // Rounding leftovers land in the last cell so margins stay exact-ish.
    let last = m * n - 1;
    plan[last] = (plan[last] + s[m - 1].max(d[n - 1])).max(0.0);
}

/// Solve `u_i + v_j = c_ij` on the basis tree with `u_0 = 0`.
fn potentials(
    m: usize,
    n: usize,
    cost: &[f64],
    basic: &[bool],
    u: &mut [f64],
    v: &mut [f64],
) -> Result<()> {
    let mut row_done = vec![false; m];
    let mut col_done = vec![false; n];
    row_done[0] = true;
    u[0] = 0.0;
    let mut stack = vec![(true, 0usize)];
    let mut seen = 1;
    while let Some((is_row, idx)) = stack.pop() {
        if is_row {
            for j in 0..n {
                if basic[idx * n + j] && !col_done[j] {
                    v[j] = cost[idx * n + j] - u[idx];
                    col_done[j] = true;
                    seen += 1;
                    stack.push((false, j));
                }
            }
        } else {
            for i in 0..m {
                if basic[i * n + idx] && !row_done[i] {
                    u[i] = cost[i * n + idx] - v[idx];
                    row_done[i] = true;
                    seen += 1;
                    stack.push((true, i));
                }
            }
        }
    }
    if seen != m + n {
        return Err(Error::Internal("basis is not a spanning tree".into()));
    }
    Ok(())
}

/// Cells of the unique cycle closed by adding `(i, j)` to the basis tree,
/// starting with `(i, j)` itself and alternating sign from there.
fn tree_path(m: usize, n: usize, basic: &[bool], i: usize, j: usize) -> Result<Vec<usize>> {
    // Nodes: rows 0..m, columns m..m+n. Search from column j to row i.
    let total = m + n;
    let mut parent = vec![usize::MAX; total];
    let start = m + j;
    parent[start] = start;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == i {
            break;
        }
        if node >= m {
            let col = node - m;
            for r in 0..m {
                if basic[r * n + col] && parent[r] == usize::MAX {
                    parent[r] = node;
                    queue.push_back(r);
                }
            }
        } else {
            for c in 0..n {
                if basic[node * n + c] && parent[m + c] == usize::MAX {
                    parent[m + c] = node;
                    queue.push_back(m + c);
                }
            }
        }
    }
    if parent[i] == usize::MAX {
        return Err(Error::Internal("entering cell not connected to basis".into()));
    }
    let mut cycle = vec![i * n + j];
    let mut node = i;
    while node != start {
        let up = parent[node];
        let cell = if node < m {
            node * n + (up - m)
        } else {
            up * n + (node - m)
        };
        cycle.push(cell);
        node = up;
    }
    Ok(cycle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn check_certificate(supply: &[f64], demand: &[f64], cost: &[f64], sol: &TransportSolution) {
        let (m, n) = (supply.len(), demand.len());
        for i in 0..m {
            let r: f64 = (0..n).map(|j| sol.plan[i * n + j]).sum();
            assert!((r - supply[i]).abs() < 1e-9, "row {i}: {r} vs {}", supply[i]);
        }
        for j in 0..n {
            let c: f64 = (0..m).map(|i| sol.plan[i * n + j]).sum();
            assert!((c - demand[j]).abs() < 1e-9, "col {j}: {c} vs {}", demand[j]);
        }
        assert!(sol.plan.iter().all(|x| *x >= 0.0));
        for i in 0..m {
            for j in 0..n {
                assert!(sol.u[i] + sol.v[j] <= cost[i * n + j] + 1e-9);
            }
        }
        let dual: f64 = supply.iter().zip(&sol.u).map(|(a, b)| a * b).sum::<f64>()
            + demand.iter().zip(&sol.v).map(|(a, b)| a * b).sum::<f64>();
        assert!((dual - sol.value).abs() < 1e-9, "dual {dual} primal {}", sol.value);
    }

    #[test]
    fn two_by_two_total_variation() {
        let sol = solve_transport(&[0.5, 0.5], &[1.0, 0.0], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((sol.value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_coupling_is_free() {
        let w = [0.2, 0.3, 0.5];
        let cost: Vec<f64> = (0..9).map(|k| if k / 3 == k % 3 { 0.0 } else { 1.0 }).collect();
        let sol = solve_transport(&w, &w, &cost).unwrap();
        assert_eq!(sol.value, 0.0);
    }

    #[test]
    fn degenerate_margins_terminate() {
        let s = [0.25, 0.25, 0.25, 0.25];
        let cost: Vec<f64> = (0..16).map(|k| ((k / 4) as f64 - (k % 4) as f64).abs()).collect();
        let sol = solve_transport(&s, &s, &cost).unwrap();
        check_certificate(&s, &s, &cost, &sol);
        assert!(sol.value.abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(solve_transport(&[1.0], &[1.0], &[0.0, 1.0]).is_err());
        assert!(solve_transport(&[1.0], &[0.5], &[0.0]).is_err());
        assert!(solve_transport(&[-1.0, 2.0], &[1.0], &[0.0, 0.0]).is_err());
    }

    fn margins(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64], len).prop_filter_map(
            "nonzero",
            |w| {
                let t: f64 = w.iter().sum();
                (t > 0.0).then(|| w.iter().map(|x| x / t).collect())
            },
        )
    }

    proptest! {
        #[test]
        fn certificate_holds(
            (m, n) in (1usize..7, 1usize..7),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |len: usize| {
                let w: Vec<f64> = (0..len).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() }).collect();
                let t: f64 = w.iter().sum();
                if t == 0.0 { vec![1.0 / len as f64; len] } else { w.iter().map(|x| x / t).collect() }
            };
            let s = draw(m);
            let d = draw(n);
            let cost: Vec<f64> = (0..m * n).map(|_| (rng.gen::<f64>() * 4.0).floor()).collect();
            let sol = solve_transport(&s, &d, &cost).unwrap();
            check_certificate(&s, &d, &cost, &sol);
        }

        #[test]
        fn uniform_margins_random_costs(s in margins(5), cost in prop::collection::vec(0.0..10.0f64, 25)) {
            let d = vec![0.2; 5];
            let sol = solve_transport(&s, &d, &cost).unwrap();
            check_certificate(&s, &d, &cost, &sol);
        }
    }
}
