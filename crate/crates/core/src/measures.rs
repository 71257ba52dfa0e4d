//! Finite probability spaces, metrics and path measures.
//!
//! Every other module computes on these types. Probabilities are plain
//! `f64` vectors indexed by point position; weights must sum to one within
//! [`NORMALIZATION_TOL`] and are never silently renormalized. Points with
//! zero weight stay in the support so couplings keep a rectangular shape.
//!
//! Path spaces `E^n` are flattened with the first coordinate most
//! significant: the path `(x_1, ..., x_n)` over a base of size `m` lives at
//! index `sum_j x_j * m^(n - j)`. A prefix of length `i` is therefore
//! `index / m^(n - i)`.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Maximum allowed drift of a weight vector's sum away from one.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// A finite set of labelled points, optionally embedded in `R^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSpace {
    points: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<Vec<f64>>>,
}

impl DiscreteSpace {
    pub fn new(points: Vec<String>, embedding: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if points.is_empty() {
            return domain("a space needs at least one point");
        }
        let mut sorted = points.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != points.len() {
            return domain("point ids must be unique");
        }
        if let Some(emb) = &embedding {
            if emb.len() != points.len() {
                return domain(format!(
                    "embedding has {} vectors for {} points",
                    emb.len(),
                    points.len()
                ));
            }
            let dim = emb[0].len();
            if emb.iter().any(|v| v.len() != dim) {
                return domain("embedding vectors must share one dimension");
            }
            if emb.iter().flatten().any(|v| !v.is_finite()) {
                return domain("embedding coordinates must be finite");
            }
        }
        Ok(Self { points, embedding })
    }

    /// Points labelled `"0"`, `"1"`, ... with no embedding.
    pub fn indexed(size: usize) -> Self {
        Self {
            points: (0..size).map(|i| i.to_string()).collect(),
            embedding: None,
        }
    }

    /// Points on the real line at the given coordinates.
    pub fn on_line(coords: &[f64]) -> Result<Self> {
        Self::new(
            (0..coords.len()).map(|i| i.to_string()).collect(),
            Some(coords.iter().map(|&c| vec![c]).collect()),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[String] {
        &self.points
    }

    pub fn embedding(&self) -> Option<&[Vec<f64>]> {
        self.embedding.as_deref()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.points.iter().position(|p| p == id)
    }

    /// The product space `self^m`, ids joined by `,` and embeddings concatenated.
    pub fn power(&self, m: usize) -> Result<Self> {
        if m == 0 {
            return domain("power of a space needs m >= 1");
        }
        let size = self
            .len()
            .checked_pow(m as u32)
            .ok_or_else(|| Error::Domain("product space too large".into()))?;
        let mut points = Vec::with_capacity(size);
        let mut embedding = self.embedding.as_ref().map(|_| Vec::with_capacity(size));
        for idx in 0..size {
            let coords = decode_path(idx, self.len(), m);
            points.push(
                coords
                    .iter()
                    .map(|&c| self.points[c].as_str())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            if let (Some(out), Some(base)) = (embedding.as_mut(), self.embedding.as_ref()) {
                out.push(coords.iter().flat_map(|&c| base[c].iter().copied()).collect());
            }
        }
        Ok(Self { points, embedding })
    }
}

/// Decode a flattened path index into coordinates (first coordinate first).
pub fn decode_path(mut idx: usize, base: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = idx % base;
        idx /= base;
    }
    out
}

pub fn encode_path(coords: &[usize], base: usize) -> usize {
    coords.iter().fold(0, |acc, &c| acc * base + c)
}

/// A probability vector over a [`DiscreteSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    space: Arc<DiscreteSpace>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(space: Arc<DiscreteSpace>, weights: Vec<f64>) -> Result<Self> {
        check_probability_vector(&weights, space.len())?;
        Ok(Self { space, weights })
    }

    pub fn uniform(space: Arc<DiscreteSpace>) -> Self {
        let w = 1.0 / space.len() as f64;
        let weights = vec![w; space.len()];
        Self { space, weights }
    }

    pub fn point_mass(space: Arc<DiscreteSpace>, at: usize) -> Result<Self> {
        if at >= space.len() {
            return domain(format!("point {at} outside a space of {}", space.len()));
        }
        let mut weights = vec![0.0; space.len()];
        weights[at] = 1.0;
        Ok(Self { space, weights })
    }

    pub fn space(&self) -> &Arc<DiscreteSpace> {
        &self.space
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn same_space(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.space, &other.space) || *self.space == *other.space
    }

    /// Expectation of a function given pointwise.
    pub fn expect(&self, f: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, v)| w * v)
            .sum()
    }

    pub fn to_spec(&self) -> MeasureSpec {
        MeasureSpec {
            points: self.space.points.clone(),
            weights: self.weights.clone(),
            embedding: self.space.embedding.clone(),
        }
    }
}

fn check_probability_vector(weights: &[f64], len: usize) -> Result<()> {
    if weights.len() != len {
        return domain(format!("{} weights for {len} points", weights.len()));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return domain(format!("weights must be finite and nonnegative, got {w}"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return domain(format!("weights sum to {total}, not 1"));
    }
    Ok(())
}

/// Serialized form of a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub points: Vec<String>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<Vec<f64>>>,
}

impl MeasureSpec {
    pub fn build(&self) -> Result<DiscreteMeasure> {
        let space = DiscreteSpace::new(self.points.clone(), self.embedding.clone())?;
        DiscreteMeasure::new(Arc::new(space), self.weights.clone())
    }
}

/// Ground metric on a finite space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hamming,
    Euclidean,
    Table(Vec<Vec<f64>>),
}

impl Metric {
    /// Dense distance matrix on `space`, validating the metric against it.
    pub fn matrix(&self, space: &DiscreteSpace) -> Result<Vec<Vec<f64>>> {
        let m = space.len();
        match self {
            Metric::Hamming => Ok((0..m)
                .map(|i| (0..m).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
                .collect()),
            Metric::Euclidean => {
                let emb = space
                    .embedding()
                    .ok_or_else(|| Error::Domain("euclidean metric needs an embedding".into()))?;
                Ok((0..m)
                    .map(|i| (0..m).map(|j| euclidean(&emb[i], &emb[j])).collect())
                    .collect())
            }
            Metric::Table(table) => {
                if table.len() != m || table.iter().any(|r| r.len() != m) {
                    return domain(format!("cost table must be {m}x{m}"));
                }
                for i in 0..m {
                    if table[i][i] != 0.0 {
                        return domain("cost table needs a zero diagonal");
                    }
                    for j in 0..m {
                        let c = table[i][j];
                        if !c.is_finite() || c < 0.0 {
                            return domain("cost table entries must be finite and nonnegative");
                        }
                        if c != table[j][i] {
                            return domain("cost table must be symmetric");
                        }
                    }
                }
                Ok(table.clone())
            }
        }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The ℓᵖ combination `d_p(x, y) = (Σ_j d(x_j, y_j)^p)^(1/p)` on `E^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathMetric {
    pub base: Metric,
    pub exponent: f64,
}

impl PathMetric {
    pub fn distance(&self, base: &[Vec<f64>], x: &[usize], y: &[usize]) -> f64 {
        let p = self.exponent;
        if p.is_infinite() {
            return x.iter().zip(y).map(|(&a, &b)| base[a][b]).fold(0.0, f64::max);
        }
        x.iter()
            .zip(y)
            .map(|(&a, &b)| base[a][b].powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

/// Transition rule producing the law of `X_{j+1}` from the realized prefix.
#[derive(Clone)]
pub enum Kernel {
    /// Time-homogeneous Markov kernel, one row per current state.
    Markov(Vec<Vec<f64>>),
    /// One Markov matrix per transition `X_j -> X_{j+1}`, `j = 1..n-1`.
    MarkovSteps(Vec<Vec<Vec<f64>>>),
    /// Arbitrary dependence on the whole prefix `(x_1, ..., x_j)`.
    History(Arc<dyn Fn(&[usize]) -> Vec<f64> + Send + Sync>),
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Markov(rows) => f.debug_tuple("Markov").field(rows).finish(),
            Kernel::MarkovSteps(steps) => f.debug_tuple("MarkovSteps").field(steps).finish(),
            Kernel::History(_) => f.write_str("History(<fn>)"),
        }
    }
}

impl Kernel {
    pub fn iid(weights: &[f64]) -> Self {
        Kernel::Markov(vec![weights.to_vec(); weights.len()])
    }

    fn row(&self, prefix: &[usize]) -> Vec<f64> {
        let last = *prefix.last().expect("kernel rows need a nonempty prefix");
        match self {
            Kernel::Markov(rows) => rows[last].clone(),
            Kernel::MarkovSteps(steps) => steps[prefix.len() - 1][last].clone(),
            Kernel::History(f) => f(prefix),
        }
    }
}

/// Law of a path `(X_1, ..., X_n)` on `E^n`, stored as its flattened joint.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMeasure {
    base: Arc<DiscreteSpace>,
    horizon: usize,
    joint: Vec<f64>,
}

/// Build the path law from the law of `X_1` and a transition kernel.
pub fn path_measure(initial: &DiscreteMeasure, kernel: &Kernel, n: usize) -> Result<PathMeasure> {
    if n == 0 {
        return domain("horizon must be at least 1");
    }
    let base = initial.space().clone();
    let m = base.len();
    if let Kernel::Markov(rows) = kernel {
        if rows.len() != m {
            return domain(format!("kernel has {} rows for {m} states", rows.len()));
        }
    }
    if let Kernel::MarkovSteps(steps) = kernel {
        if steps.len() + 1 < n {
            return domain(format!("{} transition matrices for horizon {n}", steps.len()));
        }
        if steps.iter().any(|s| s.len() != m) {
            return domain("every transition matrix needs one row per state");
        }
    }
    let mut joint = initial.weights().to_vec();
    for len in 1..n {
        let mut next = Vec::with_capacity(joint.len() * m);
        for (idx, &w) in joint.iter().enumerate() {
            let prefix = decode_path(idx, m, len);
            let row = kernel.row(&prefix);
            check_probability_vector(&row, m).map_err(|e| {
                Error::Domain(format!("kernel row after prefix {prefix:?} invalid: {e}"))
            })?;
            next.extend(row.iter().map(|r| w * r));
        }
        joint = next;
    }
    Ok(PathMeasure {
        base,
        horizon: n,
        joint,
    })
}

impl PathMeasure {
    /// Wrap an arbitrary joint law on `E^n`.
    pub fn from_joint(base: Arc<DiscreteSpace>, horizon: usize, joint: Vec<f64>) -> Result<Self> {
        if horizon == 0 {
            return domain("horizon must be at least 1");
        }
        let size = base
            .len()
            .checked_pow(horizon as u32)
            .ok_or_else(|| Error::Domain("path space too large".into()))?;
        check_probability_vector(&joint, size)?;
        Ok(Self {
            base,
            horizon,
            joint,
        })
    }

    /// A measure on `E` seen as a path of length one.
    pub fn single(measure: &DiscreteMeasure) -> Self {
        Self {
            base: measure.space().clone(),
            horizon: 1,
            joint: measure.weights().to_vec(),
        }
    }

    /// Chain started from a fixed origin `x_0`: `X_1` has law `rows[origin]`.
    pub fn markov_from_origin(
        base: Arc<DiscreteSpace>,
        rows: Vec<Vec<f64>>,
        origin: usize,
        n: usize,
    ) -> Result<Self> {
        if origin >= rows.len() {
            return domain("origin outside the state space");
        }
        let initial = DiscreteMeasure::new(base, rows[origin].clone())?;
        path_measure(&initial, &Kernel::Markov(rows), n)
    }

    pub fn base(&self) -> &Arc<DiscreteSpace> {
        &self.base
    }

    pub fn base_size(&self) -> usize {
        self.base.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn weights(&self) -> &[f64] {
        &self.joint
    }

    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }

    pub fn decode(&self, idx: usize) -> Vec<usize> {
        decode_path(idx, self.base.len(), self.horizon)
    }

    pub fn encode(&self, coords: &[usize]) -> usize {
        encode_path(coords, self.base.len())
    }

    /// The joint as a measure on the product space.
    pub fn joint_measure(&self) -> Result<DiscreteMeasure> {
        let space = Arc::new(self.base.power(self.horizon)?);
        Ok(DiscreteMeasure {
            space,
            weights: self.joint.clone(),
        })
    }

    fn block(&self, prefix_len: usize) -> usize {
        self.base.len().pow((self.horizon - prefix_len) as u32)
    }

    fn check_prefix(&self, prefix: &[usize]) -> Result<()> {
        if prefix.len() > self.horizon {
            return domain(format!(
                "prefix of length {} exceeds horizon {}",
                prefix.len(),
                self.horizon
            ));
        }
        if let Some(c) = prefix.iter().find(|&&c| c >= self.base.len()) {
            return domain(format!("prefix coordinate {c} outside the base space"));
        }
        Ok(())
    }

    fn prefix_range(&self, prefix: &[usize]) -> std::ops::Range<usize> {
        let block = self.block(prefix.len());
        let start = encode_path(prefix, self.base.len()) * block;
        start..start + block
    }

    /// Probability that the path starts with `prefix`.
    pub fn prefix_prob(&self, prefix: &[usize]) -> Result<f64> {
        self.check_prefix(prefix)?;
        Ok(self.joint[self.prefix_range(prefix)].iter().sum())
    }

    /// Unnormalized tail weights after `prefix` together with their total.
    fn tail(&self, prefix: &[usize]) -> Result<(&[f64], f64)> {
        self.check_prefix(prefix)?;
        if prefix.len() == self.horizon {
            return domain("no coordinates remain after a full-length prefix");
        }
        let tail = &self.joint[self.prefix_range(prefix)];
        let mass: f64 = tail.iter().sum();
        if mass <= 0.0 {
            return domain(format!("prefix {prefix:?} has probability zero"));
        }
        Ok((tail, mass))
    }

    /// Conditional law of `(X_{i+1}, ..., X_n)` given `(X_1..X_i) = prefix`,
    /// as flattened weights on `E^{n-i}`.
    pub fn conditional_weights(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let (tail, mass) = self.tail(prefix)?;
        Ok(tail.iter().map(|w| w / mass).collect())
    }

    /// Conditional tail law as a path measure of horizon `n - i`.
    pub fn conditional(&self, prefix: &[usize]) -> Result<PathMeasure> {
        let joint = self.conditional_weights(prefix)?;
        Ok(PathMeasure {
            base: self.base.clone(),
            horizon: self.horizon - prefix.len(),
            joint,
        })
    }

    /// Law of `X_k` (1-based, `k > prefix.len()`) given the prefix.
    pub fn marginal_given(&self, prefix: &[usize], k: usize) -> Result<Vec<f64>> {
        if k <= prefix.len() || k > self.horizon {
            return domain(format!(
                "coordinate {k} is not in the tail after a prefix of length {}",
                prefix.len()
            ));
        }
        let (tail, mass) = self.tail(prefix)?;
        let m = self.base.len();
        let rest = self.horizon - prefix.len();
        let pos = k - prefix.len(); // 1-based inside the tail
        let stride = m.pow((rest - pos) as u32);
        let mut out = vec![0.0; m];
        for (idx, &w) in tail.iter().enumerate() {
            out[(idx / stride) % m] += w;
        }
        for v in &mut out {
            *v /= mass;
        }
        Ok(out)
    }

    /// Law of the next coordinate given the prefix.
    pub fn next_step(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.marginal_given(prefix, prefix.len() + 1)
    }

    /// Unconditional law of `X_k`.
    pub fn marginal(&self, k: usize) -> Result<Vec<f64>> {
        self.marginal_given(&[], k)
    }
}

/// Kullback–Leibler divergence `Σ Q log(Q / P)` in nats.
///
/// Returns `+∞` when `Q` charges a point that `P` does not.
pub fn kl_divergence(q: &DiscreteMeasure, p: &DiscreteMeasure) -> Result<f64> {
    if !q.same_space(p) {
        return domain("relative entropy needs both measures on one space");
    }
    Ok(kl_weights(q.weights(), p.weights()))
}

pub(crate) fn kl_weights(q: &[f64], p: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        if qi > 0.0 {
            if pi <= 0.0 {
                return f64::INFINITY;
            }
            total += qi * (qi / pi).ln();
        }
    }
    total.max(0.0)
}

/// Relative entropy between two path laws on the same `E^n`.
pub fn kl_path(q: &PathMeasure, p: &PathMeasure) -> Result<f64> {
    if q.base != p.base || q.horizon != p.horizon {
        return domain("relative entropy needs both path laws on one space");
    }
    Ok(kl_weights(&q.joint, &p.joint))
}

/// `sup_A |P(A) - Q(A)|`.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Dirichlet-distributed random measure with symmetric `concentration`.
///
/// Weights are strictly positive; the same seed always gives the same measure.
pub fn random_measure(
    space: Arc<DiscreteSpace>,
    seed: u64,
    concentration: f64,
) -> Result<DiscreteMeasure> {
    if !(concentration > 0.0 && concentration.is_finite()) {
        return domain("concentration must be positive and finite");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    let draws: Vec<f64> = (0..space.len())
        .map(|_| gamma.sample(&mut rng).max(f64::MIN_POSITIVE))
        .collect();
    let total: f64 = draws.iter().sum();
    let weights = normalize_exact(draws.iter().map(|d| d / total).collect());
    DiscreteMeasure::new(space, weights)
}

/// Push residual rounding error onto the largest entry.
pub(crate) fn normalize_exact(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    if let Some((imax, _)) = w
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
    {
        w[imax] += 1.0 - total;
    }
    w
}

/// Serialized form of a Markov path law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathMeasureSpec {
    pub points: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<Vec<f64>>>,
    /// Law of `X_1`.
    pub initial: Vec<f64>,
    pub kernels: KernelSpec,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSpec {
    Homogeneous(Vec<Vec<f64>>),
    PerStep(Vec<Vec<Vec<f64>>>),
}

impl PathMeasureSpec {
    pub fn build(&self) -> Result<PathMeasure> {
        let space = Arc::new(DiscreteSpace::new(
            self.points.clone(),
            self.embedding.clone(),
        )?);
        let initial = DiscreteMeasure::new(space, self.initial.clone())?;
        let kernel = match &self.kernels {
            KernelSpec::Homogeneous(rows) => Kernel::Markov(rows.clone()),
            KernelSpec::PerStep(steps) => Kernel::MarkovSteps(steps.clone()),
        };
        path_measure(&initial, &kernel, self.horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(a: f64, b: f64) -> Vec<Vec<f64>> {
        vec![vec![1.0 - a, a], vec![b, 1.0 - b]]
    }

    #[test]
    fn kl_examples() {
        let s = Arc::new(DiscreteSpace::indexed(2));
        let p = DiscreteMeasure::new(s.clone(), vec![0.5, 0.5]).unwrap();
        let q = DiscreteMeasure::new(s.clone(), vec![1.0, 0.0]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert!((kl_divergence(&q, &p).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(kl_divergence(&p, &q).unwrap(), f64::INFINITY);
    }

    #[test]
    fn kl_rejects_mismatched_spaces() {
        let p = DiscreteMeasure::uniform(Arc::new(DiscreteSpace::indexed(2)));
        let q = DiscreteMeasure::uniform(Arc::new(DiscreteSpace::indexed(3)));
        assert!(matches!(kl_divergence(&p, &q), Err(Error::Domain(_))));
    }

    #[test]
    fn weights_must_be_normalized() {
        let s = Arc::new(DiscreteSpace::indexed(2));
        assert!(DiscreteMeasure::new(s.clone(), vec![0.5, 0.5 + 1e-9]).is_err());
        assert!(DiscreteMeasure::new(s.clone(), vec![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::new(s, vec![0.5, 0.5 + 1e-13]).is_ok());
    }

    #[test]
    fn space_invariants() {
        assert!(DiscreteSpace::new(vec!["a".into(), "a".into()], None).is_err());
        assert!(DiscreteSpace::new(
            vec!["a".into(), "b".into()],
            Some(vec![vec![0.0], vec![0.0, 1.0]])
        )
        .is_err());
    }

    #[test]
    fn metric_validation() {
        let s = DiscreteSpace::indexed(2);
        assert!(Metric::Euclidean.matrix(&s).is_err());
        assert!(Metric::Table(vec![vec![0.0, 1.0], vec![2.0, 0.0]]).matrix(&s).is_err());
        assert!(Metric::Table(vec![vec![1.0, 1.0], vec![1.0, 0.0]]).matrix(&s).is_err());
        let line = DiscreteSpace::on_line(&[0.0, 3.0]).unwrap();
        assert_eq!(Metric::Euclidean.matrix(&line).unwrap()[0][1], 3.0);
    }

    #[test]
    fn iid_path_is_product() {
        let s = Arc::new(DiscreteSpace::indexed(3));
        let mu = vec![0.2, 0.3, 0.5];
        let init = DiscreteMeasure::new(s, mu.clone()).unwrap();
        let pm = path_measure(&init, &Kernel::iid(&mu), 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((pm.weights()[pm.encode(&[i, j])] - mu[i] * mu[j]).abs() < 1e-15);
            }
        }
        // conditional equals the unconditional tail law
        let cond = pm.conditional_weights(&[1]).unwrap();
        for (c, m) in cond.iter().zip(&mu) {
            assert!((c - m).abs() < 1e-15);
        }
    }

    #[test]
    fn two_state_chain_from_origin() {
        let s = Arc::new(DiscreteSpace::indexed(2));
        let pm = PathMeasure::markov_from_origin(s, two_state(0.3, 0.3), 0, 2).unwrap();
        assert!((pm.weights()[pm.encode(&[0, 1])] - 0.21).abs() < 1e-15);
        let next = pm.next_step(&[1]).unwrap();
        assert!((next[0] - 0.3).abs() < 1e-15 && (next[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn marginal_at_first_step_is_initial() {
        let s = Arc::new(DiscreteSpace::indexed(2));
        let init = DiscreteMeasure::new(s, vec![0.25, 0.75]).unwrap();
        let pm = path_measure(&init, &Kernel::Markov(two_state(0.1, 0.6)), 3).unwrap();
        let m1 = pm.marginal(1).unwrap();
        assert!((m1[0] - 0.25).abs() < 1e-15 && (m1[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn permutation_kernel_is_degenerate() {
        let s = Arc::new(DiscreteSpace::indexed(3));
        let perm = vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ];
        let pm = PathMeasure::markov_from_origin(s, perm, 0, 3).unwrap();
        let support: Vec<_> = pm
            .weights()
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, _)| pm.decode(i))
            .collect();
        assert_eq!(support, vec![vec![1, 2, 0]]);
    }

    #[test]
    fn markov_conditional_depends_on_last_state_only() {
        let s = Arc::new(DiscreteSpace::indexed(2));
        let init = DiscreteMeasure::new(s, vec![0.4, 0.6]).unwrap();
        let pm = path_measure(&init, &Kernel::Markov(two_state(0.2, 0.35)), 3).unwrap();
        let a = pm.conditional_weights(&[0, 1]).unwrap();
        let b = pm.conditional_weights(&[1, 1]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_probability_prefix_is_rejected() {
        let s = Arc::new(DiscreteSpace::indexed(2));
        let pm = PathMeasure::markov_from_origin(
            s,
            vec![vec![1.0, 0.0], vec![0.5, 0.5]],
            0,
            2,
        )
        .unwrap();
        assert!(matches!(pm.conditional(&[1]), Err(Error::Domain(_))));
    }

    #[test]
    fn non_stochastic_kernel_is_rejected() {
        let s = Arc::new(DiscreteSpace::indexed(2));
        let init = DiscreteMeasure::uniform(s);
        let bad = Kernel::Markov(vec![vec![0.5, 0.6], vec![0.5, 0.5]]);
        assert!(path_measure(&init, &bad, 2).is_err());
    }

    #[test]
    fn random_measure_is_deterministic_and_positive() {
        let s = Arc::new(DiscreteSpace::indexed(5));
        let a = random_measure(s.clone(), 7, 0.5).unwrap();
        let b = random_measure(s.clone(), 7, 0.5).unwrap();
        let c = random_measure(s.clone(), 8, 0.5).unwrap();
        assert_eq!(a, b);
        assert!(a.weights().iter().all(|w| *w > 0.0));
        assert!(total_variation(a.weights(), c.weights()) > 0.0);
        assert!(random_measure(s, 1, 0.0).is_err());
    }

    #[test]
    fn large_concentration_is_near_uniform() {
        let s = Arc::new(DiscreteSpace::indexed(6));
        let bound = 2.0 / 6.0;
        let worst = (0..1000)
            .map(|seed| {
                let m = random_measure(s.clone(), seed, 100.0).unwrap();
                m.weights().iter().copied().fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        assert!(worst <= bound, "max weight {worst}");
    }

    #[test]
    fn power_space_ids_and_embedding() {
        let line = DiscreteSpace::on_line(&[0.0, 1.0]).unwrap();
        let sq = line.power(2).unwrap();
        assert_eq!(sq.points()[2], "1,0");
        assert_eq!(sq.embedding().unwrap()[2], vec![1.0, 0.0]);
    }

    #[test]
    fn spec_round_trip() {
        let json = r#"{"points":["a","b"],"initial":[0.5,0.5],"kernels":[[0.7,0.3],[0.3,0.7]],"horizon":2}"#;
        let spec: PathMeasureSpec = serde_json::from_str(json).unwrap();
        let pm = spec.build().unwrap();
        assert!((pm.weights()[1] - 0.15).abs() < 1e-15);
        let bad = r#"{"points":["a"],"weights":[1.0],"extra":1}"#;
        assert!(serde_json::from_str::<MeasureSpec>(bad).is_err());
    }
}
