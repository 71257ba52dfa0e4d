//! Structured records of inequality checks.
//!
//! Every verifier returns an [`ExperimentReport`]. Numeric fields are
//! `Option<f64>`: non-finite values are stored as `None` so serialized
//! reports never contain `NaN` or infinities.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    /// A certified interval straddles the threshold by at most `gap`.
    Inconclusive { gap: f64 },
}

impl Verdict {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

/// Descriptive identifiers of the inequalities this crate checks.
pub const INEQUALITIES: &[(&str, &str)] = &[
    ("weak-transport-inequality", "W~_{p,d}(P,Q) <= sqrt(2 C K(Q|P))"),
    ("weak-transport-hamming", "W~_{2,Hamming}(P,Q) <= sqrt(2 K(Q|P)) for every P"),
    ("weak-transport-hamming-inverted", "W~_{2,Hamming}(Q,P) <= sqrt(2 K(Q|P)) for every P"),
    ("weak-transport-triangle", "W~(P,R) <= W~(P,Q) + W~(Q,R)"),
    ("weak-transport-alpha-triangle", "W~_a(P,R) <= W~_{a~}(P,Q) + W~_a(Q,R), Q[a~^q] <= R[a^q]"),
    ("weak-transport-dual", "P exp(l(f_a - Pf) - C l^2((a^q-1)/q + 1/2)) <= 1"),
    ("weak-transport-dual-inverted", "P exp(l(P f_a - f) - C l^2((P a^q-1)/q + 1/2)) <= 1"),
    ("weak-dependence-transport", "W~_{p,d_p}(P,Q) <= sqrt(2 C ||Gamma||_p^2 n^(2/p-1) K(Q|P))"),
    ("gamma-interpolation", "||Gamma||_2^2 <= ||Gamma||_1 ||Gamma||_inf"),
    ("stationary-gamma-norm", "||Gamma||_p <= M + sum_i gamma_{i,0}(p)"),
    ("tsirelson-convex", "P exp(g - Pg - C|grad g|^2/2) <= 1, g separately convex"),
    ("tsirelson-concave", "P exp(g - Pg - C P|grad g|^2/2) <= 1, g separately concave"),
    ("self-bounding-hamming", "P exp(l(f - Pf) - C l^2 sum_j a_j^2 / 2) <= 1 when f(x)-f(y) <= sum_j a_j(x) 1{x_j != y_j}"),
    ("self-bounding-hamming-inverted", "P exp(l(Pf - f) - C l^2 sum_j P[a_j^2] / 2) <= 1 under the same condition"),
    ("sub-gaussian-linear", "log P exp(l(<a,X> - P<a,X>)) <= C l^2 |a|^2 / 2"),
    ("convex-poincare", "Var g <= C P|grad g|^2, g separately convex"),
    ("talagrand-convex-distance", "P exp(d_T^2(X,A)/4C) <= 1/P(A)"),
    ("talagrand-euclidean-hull", "P exp(d_N^2(X,conv A)/4C) <= 1/P(A)"),
    ("oracle-nonexact", "R(th^) <= (1+B1 eta)R(th-) + (B2 d + 16 rho C log(1/eps))/(n eta) + B3/(n eta)^2"),
    ("oracle-exact", "R(th^) <= R(th-) + 160(B^2+4BM)/n (Bd + 8 rho C(log(1/eps) - log P(r>M)) + ...)"),
    ("oracle-expectation", "P R-(th^) <= P|Z|_n^2/beta + 4 sqrt(rho C P[K] beta P R-(th^)/(2n))"),
];

/// Human-readable statement for a registered inequality id.
pub fn inequality(id: &str) -> Option<&'static str> {
    INEQUALITIES.iter().find(|(k, _)| *k == id).map(|(_, v)| *v)
}

pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    /// Registry id of the inequality under test.
    pub inequality: String,
    pub statement: String,
    pub params: serde_json::Value,
    pub left: Option<f64>,
    pub right: Option<f64>,
    pub left_se: Option<f64>,
    pub right_se: Option<f64>,
    /// Certified interval for the left side when it is not a point value.
    pub interval: Option<[Option<f64>; 2]>,
    pub verdict: Verdict,
    pub seed: Option<u64>,
    pub notes: Vec<String>,
    /// Excluded from reproducibility comparisons.
    pub wall_time_s: Option<f64>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, inequality_id: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            inequality: inequality_id.to_string(),
            statement: inequality(inequality_id).unwrap_or("").to_string(),
            params: serde_json::Value::Null,
            left: None,
            right: None,
            left_se: None,
            right_se: None,
            interval: None,
            verdict: Verdict::Fail,
            seed: None,
            notes: Vec::new(),
            wall_time_s: None,
        }
    }

    pub fn sides(mut self, left: f64, right: f64) -> Self {
        self.left = finite(left);
        self.right = finite(right);
        self
    }

    pub fn ses(mut self, left_se: f64, right_se: f64) -> Self {
        self.left_se = finite(left_se);
        self.right_se = finite(right_se);
        self
    }

    pub fn verdict(mut self, verdict: Verdict) -> Self {
        self.verdict = verdict;
        self
    }

    pub fn params(mut self, params: serde_json::Value) -> Self {
        self.params = params;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_fields_serialize_as_null() {
        let r = ExperimentReport::new("x", "convex-poincare").sides(f64::INFINITY, 1.0);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["left"].is_null());
        assert_eq!(json["right"], 1.0);
        assert_eq!(json["verdict"]["status"], "FAIL");
    }

    #[test]
    fn registry_ids_are_unique() {
        let mut ids: Vec<_> = INEQUALITIES.iter().map(|(k, _)| *k).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), INEQUALITIES.len());
    }
}
