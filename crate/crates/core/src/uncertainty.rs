//! The uncertainty set Theta and its support function G.
//!
//! Theta is a set of control pairs (gamma, mu): gamma is a d x d volatility
//! factor and mu a d-dimensional drift rate. The noise it generates has
//! quadratic-variation rate gamma gamma^T and drift mu, and all nonlinear
//! expectations here are suprema over Theta. The support function
//!
//! ```text
//! G(A, p) = sup over (gamma, mu) in Theta of
//!           1/2 <A, gamma gamma^T> + <p, mu>
//! ```
//!
//! (Frobenius pairing on the matrix slot) is what both the estimators and
//! the grid solver maximize, so the three representations kept here are the
//! ones with computable suprema:
//!
//! * `Singleton`: one pair, no uncertainty; G is affine.
//! * `DiagBox`: gamma = diag(s_1..s_d) with s_i in [sigma_low, sigma_high]
//!   and |mu_i| <= beta_i. For diagonal A the supremum splits per axis into
//!   the closed form sum of 1/2 (sigma_high^2 a_ii^+ - sigma_low^2 a_ii^-)
//!   plus sum of beta_i |p_i|. Off-diagonal A is a hard error: the box never
//!   sees it, and silently ignoring cross terms would corrupt callers that
//!   meant a richer set (use `VertexList` for cross terms).
//! * `VertexList`: an explicit finite list; G is the max over the list.
//!
//! Every simulation policy and every grid-solver control is drawn from
//! [`UncertaintySet::vertices`], so estimates are exact suprema for
//! singleton and diag-box sets (bang-bang controls attain the sup there)
//! and lower envelopes of the true supremum for arbitrary vertex lists.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThetaError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("diag-box set requires a diagonal matrix argument; entry ({i},{j}) is {value}")]
    NonDiagonal { i: usize, j: usize, value: f64 },
    #[error("invalid uncertainty set: {0}")]
    Invalid(String),
    #[error("uncertainty set is volatility-degenerate (sigma_low^2 = {sigma_low_sq}); \
             this operation requires uniform ellipticity")]
    Degenerate { sigma_low_sq: f64 },
}

/// One admissible control: volatility factor `gamma` (d x d, row-major) and
/// drift rate `mu` (length d).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlValue {
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
}

impl ControlValue {
    pub fn new(gamma: Vec<f64>, mu: Vec<f64>) -> Result<ControlValue, ThetaError> {
        let d = mu.len();
        if gamma.len() != d * d {
            return Err(ThetaError::DimensionMismatch {
                expected: d * d,
                got: gamma.len(),
            });
        }
        if d == 0 {
            return Err(ThetaError::Invalid("dimension must be at least 1".into()));
        }
        if gamma.iter().chain(mu.iter()).any(|v| !v.is_finite()) {
            return Err(ThetaError::Invalid("non-finite control entry".into()));
        }
        Ok(ControlValue { gamma, mu })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// gamma gamma^T, the quadratic-variation rate under this control.
    pub fn gram(&self) -> Vec<f64> {
        linalg::gram(&self.gamma, self.dim())
    }

    /// Value of the affine form inside G at this control.
    pub fn support_value(&self, a: &[f64], p: &[f64]) -> f64 {
        0.5 * linalg::frob(a, &self.gram()) + linalg::dot(p, &self.mu)
    }

    /// Compact label for reports: diagonal factors print as diag(..).
    pub fn describe(&self) -> String {
        let d = self.dim();
        let diag_only = (0..d).all(|i| (0..d).all(|j| i == j || self.gamma[i * d + j] == 0.0));
        let gamma = if diag_only {
            let entries: Vec<String> = (0..d).map(|i| fmt_num(self.gamma[i * d + i])).collect();
            format!("diag({})", entries.join(","))
        } else {
            let rows: Vec<String> = (0..d)
                .map(|i| {
                    let row: Vec<String> =
                        (0..d).map(|j| fmt_num(self.gamma[i * d + j])).collect();
                    format!("[{}]", row.join(","))
                })
                .collect();
            format!("[{}]", rows.join(","))
        };
        let mu: Vec<String> = self.mu.iter().map(|&v| fmt_num(v)).collect();
        format!("gamma={}, mu=({})", gamma, mu.join(","))
    }
}

fn fmt_num(v: f64) -> String {
    format!("{}", v)
}

/// Ellipticity envelope of the set: every represented gamma gamma^T lies
/// between `sigma_low_sq I` and `sigma_high_sq I`, and every |mu| is at most
/// `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityParams {
    pub sigma_low_sq: f64,
    pub sigma_high_sq: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Singleton(ControlValue),
    DiagBox {
        sigma_low: f64,
        sigma_high: f64,
        beta: Vec<f64>,
    },
    VertexList(Vec<ControlValue>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySet {
    d: usize,
    kind: Kind,
}

impl UncertaintySet {
    pub fn singleton(control: ControlValue) -> Result<UncertaintySet, ThetaError> {
        let d = control.dim();
        Ok(UncertaintySet {
            d,
            kind: Kind::Singleton(control),
        })
    }

    pub fn diag_box(
        sigma_low: f64,
        sigma_high: f64,
        beta: Vec<f64>,
    ) -> Result<UncertaintySet, ThetaError> {
        let d = beta.len();
        if d == 0 {
            return Err(ThetaError::Invalid("beta must have at least one entry".into()));
        }
        if !(sigma_low.is_finite() && sigma_high.is_finite()) || !beta.iter().all(|b| b.is_finite())
        {
            return Err(ThetaError::Invalid("non-finite diag-box parameter".into()));
        }
        if sigma_low < 0.0 || sigma_high < sigma_low {
            return Err(ThetaError::Invalid(format!(
                "need 0 <= sigma_low <= sigma_high, got [{}, {}]",
                sigma_low, sigma_high
            )));
        }
        if beta.iter().any(|&b| b < 0.0) {
            return Err(ThetaError::Invalid("beta entries must be nonnegative".into()));
        }
        Ok(UncertaintySet {
            d,
            kind: Kind::DiagBox {
                sigma_low,
                sigma_high,
                beta,
            },
        })
    }

    pub fn vertex_list(controls: Vec<ControlValue>) -> Result<UncertaintySet, ThetaError> {
        let first = controls
            .first()
            .ok_or_else(|| ThetaError::Invalid("vertex list must be nonempty".into()))?;
        let d = first.dim();
        for c in &controls {
            if c.dim() != d {
                return Err(ThetaError::DimensionMismatch {
                    expected: d,
                    got: c.dim(),
                });
            }
        }
        Ok(UncertaintySet {
            d,
            kind: Kind::VertexList(controls),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// The finite control family used by simulation policies and the grid
    /// solver. Order is deterministic and documented: diag-box corners
    /// enumerate gamma entries lexicographically (low before high), then mu
    /// entries (-beta before +beta); a vertex list keeps its given order.
    /// Ties in any argmax resolve to the earliest entry.
    pub fn vertices(&self) -> Vec<ControlValue> {
        match &self.kind {
            Kind::Singleton(c) => vec![c.clone()],
            Kind::VertexList(list) => list.clone(),
            Kind::DiagBox {
                sigma_low,
                sigma_high,
                beta,
            } => {
                let d = self.d;
                let s_choices: Vec<Vec<f64>> = (0..d)
                    .map(|_| {
                        if sigma_low == sigma_high {
                            vec![*sigma_low]
                        } else {
                            vec![*sigma_low, *sigma_high]
                        }
                    })
                    .collect();
                let m_choices: Vec<Vec<f64>> = beta
                    .iter()
                    .map(|&b| if b == 0.0 { vec![0.0] } else { vec![-b, b] })
                    .collect();
                let mut out = Vec::new();
                for s in cartesian(&s_choices) {
                    for m in cartesian(&m_choices) {
                        let mut gamma = vec![0.0; d * d];
                        for i in 0..d {
                            gamma[i * d + i] = s[i];
                        }
                        out.push(ControlValue { gamma, mu: m });
                    }
                }
                out
            }
        }
    }

    /// Evaluate G(A, p). `a` is d x d row-major and must be symmetric in the
    /// caller's intent; only a diag-box inspects the off-diagonal entries
    /// (to reject them).
    pub fn eval_g(&self, a: &[f64], p: &[f64]) -> Result<f64, ThetaError> {
        self.check_dims(a, p)?;
        match &self.kind {
            Kind::Singleton(c) => Ok(c.support_value(a, p)),
            Kind::VertexList(list) => {
                let mut best = f64::NEG_INFINITY;
                for c in list {
                    let v = c.support_value(a, p);
                    if v > best || v.is_nan() {
                        best = v;
                    }
                }
                Ok(best)
            }
            Kind::DiagBox {
                sigma_low,
                sigma_high,
                beta,
            } => {
                self.reject_off_diagonal(a)?;
                let (lo2, hi2) = (sigma_low * sigma_low, sigma_high * sigma_high);
                let mut total = 0.0;
                for i in 0..self.d {
                    let aii = a[i * self.d + i];
                    total += 0.5 * (hi2 * aii.max(0.0) + lo2 * aii.min(0.0));
                    total += beta[i] * p[i].abs();
                }
                Ok(total)
            }
        }
    }

    /// A control attaining the supremum in G(A, p), with deterministic
    /// tie-breaking: diag-box picks the lexicographically smallest corner,
    /// a vertex list the lowest index.
    pub fn argmax_control(&self, a: &[f64], p: &[f64]) -> Result<ControlValue, ThetaError> {
        self.check_dims(a, p)?;
        match &self.kind {
            Kind::Singleton(c) => Ok(c.clone()),
            Kind::VertexList(list) => {
                let mut best = &list[0];
                let mut best_v = best.support_value(a, p);
                for c in &list[1..] {
                    let v = c.support_value(a, p);
                    if v > best_v {
                        best = c;
                        best_v = v;
                    }
                }
                Ok(best.clone())
            }
            Kind::DiagBox {
                sigma_low,
                sigma_high,
                beta,
            } => {
                self.reject_off_diagonal(a)?;
                let d = self.d;
                let mut gamma = vec![0.0; d * d];
                let mut mu = vec![0.0; d];
                for i in 0..d {
                    let aii = a[i * d + i];
                    gamma[i * d + i] = if aii > 0.0 { *sigma_high } else { *sigma_low };
                    mu[i] = if p[i] > 0.0 { beta[i] } else { -beta[i] };
                }
                Ok(ControlValue { gamma, mu })
            }
        }
    }

    /// (sigma_low^2, sigma_high^2, beta) for this set. For a singleton or a
    /// vertex list these are the extreme eigenvalues of the gamma gamma^T
    /// range and the largest |mu|.
    pub fn ellipticity_params(&self) -> EllipticityParams {
        match &self.kind {
            Kind::DiagBox {
                sigma_low,
                sigma_high,
                beta,
            } => EllipticityParams {
                sigma_low_sq: sigma_low * sigma_low,
                sigma_high_sq: sigma_high * sigma_high,
                beta: linalg::norm2(beta),
            },
            Kind::Singleton(c) => {
                let (lo, hi) = linalg::sym_eig_bounds(&c.gram(), self.d);
                EllipticityParams {
                    sigma_low_sq: lo,
                    sigma_high_sq: hi,
                    beta: linalg::norm2(&c.mu),
                }
            }
            Kind::VertexList(list) => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                let mut beta: f64 = 0.0;
                for c in list {
                    let (l, h) = linalg::sym_eig_bounds(&c.gram(), self.d);
                    lo = lo.min(l);
                    hi = hi.max(h);
                    beta = beta.max(linalg::norm2(&c.mu));
                }
                EllipticityParams {
                    sigma_low_sq: lo,
                    sigma_high_sq: hi,
                    beta,
                }
            }
        }
    }

    /// Ellipticity params, rejecting volatility-degenerate sets. The
    /// estimators and the grid solver call this: without a uniform lower
    /// volatility bound, exit times have no moment bounds and the equation
    /// is not uniformly elliptic.
    pub fn require_uniformly_elliptic(&self) -> Result<EllipticityParams, ThetaError> {
        let params = self.ellipticity_params();
        if params.sigma_low_sq <= 0.0 {
            return Err(ThetaError::Degenerate {
                sigma_low_sq: params.sigma_low_sq,
            });
        }
        Ok(params)
    }

    fn check_dims(&self, a: &[f64], p: &[f64]) -> Result<(), ThetaError> {
        if a.len() != self.d * self.d {
            return Err(ThetaError::DimensionMismatch {
                expected: self.d * self.d,
                got: a.len(),
            });
        }
        if p.len() != self.d {
            return Err(ThetaError::DimensionMismatch {
                expected: self.d,
                got: p.len(),
            });
        }
        Ok(())
    }

    fn reject_off_diagonal(&self, a: &[f64]) -> Result<(), ThetaError> {
        for i in 0..self.d {
            for j in 0..self.d {
                if i != j && a[i * self.d + j] != 0.0 {
                    return Err(ThetaError::NonDiagonal {
                        i,
                        j,
                        value: a[i * self.d + j],
                    });
                }
            }
        }
        Ok(())
    }
}

/// Cartesian product of per-axis choice lists, first axis slowest. Sizes
/// are 2^d with d in the low single digits.
fn cartesian(choices: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in choices {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &v in axis {
                let mut row = prefix.clone();
                row.push(v);
                next.push(row);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn box_1d(lo: f64, hi: f64, beta: f64) -> UncertaintySet {
        UncertaintySet::diag_box(lo, hi, vec![beta]).unwrap()
    }

    #[test]
    fn one_dimensional_closed_form() {
        let theta = box_1d(1.0, 2.0, 0.0);
        assert_eq!(theta.eval_g(&[2.0], &[0.0]).unwrap(), 4.0);
        assert_eq!(theta.eval_g(&[-2.0], &[0.0]).unwrap(), -1.0);
        assert_eq!(theta.eval_g(&[0.0], &[5.0]).unwrap(), 0.0);

        let with_drift = box_1d(1.0, 1.0, 0.5);
        assert_eq!(with_drift.eval_g(&[0.0], &[2.0]).unwrap(), 1.0);
        assert_eq!(with_drift.eval_g(&[0.0], &[-2.0]).unwrap(), 1.0);
    }

    #[test]
    fn singleton_is_affine() {
        let c = ControlValue::new(vec![1.0], vec![0.0]).unwrap();
        let theta = UncertaintySet::singleton(c).unwrap();
        assert_eq!(theta.eval_g(&[2.0], &[5.0]).unwrap(), 1.0);
        assert_eq!(theta.eval_g(&[-2.0], &[5.0]).unwrap(), -1.0);
    }

    #[test]
    fn diag_box_rejects_cross_terms() {
        let theta = UncertaintySet::diag_box(1.0, 2.0, vec![0.0, 0.0]).unwrap();
        let a = vec![1.0, 0.5, 0.5, 1.0];
        assert!(matches!(
            theta.eval_g(&a, &[0.0, 0.0]),
            Err(ThetaError::NonDiagonal { i: 0, j: 1, .. })
        ));
        assert!(theta
            .eval_g(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0])
            .is_ok());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let theta = box_1d(1.0, 2.0, 0.0);
        assert!(matches!(
            theta.eval_g(&[1.0, 0.0, 0.0, 1.0], &[0.0]),
            Err(ThetaError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            theta.eval_g(&[1.0], &[0.0, 0.0]),
            Err(ThetaError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ellipticity_params_examples() {
        let single = UncertaintySet::singleton(
            ControlValue::new(vec![1.0], vec![0.0]).unwrap(),
        )
        .unwrap();
        let p = single.ellipticity_params();
        assert_eq!((p.sigma_low_sq, p.sigma_high_sq, p.beta), (1.0, 1.0, 0.0));

        let theta = UncertaintySet::diag_box(1.0, 2.0, vec![0.5, 0.5]).unwrap();
        let p = theta.ellipticity_params();
        assert_eq!(p.sigma_low_sq, 1.0);
        assert_eq!(p.sigma_high_sq, 4.0);
        assert_relative_eq!(p.beta, 0.5_f64 * 2.0_f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn degenerate_sets_are_flagged() {
        let zero_vol = UncertaintySet::singleton(
            ControlValue::new(vec![0.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            zero_vol.require_uniformly_elliptic(),
            Err(ThetaError::Degenerate { .. })
        ));
        assert!(box_1d(1.0, 2.0, 0.0).require_uniformly_elliptic().is_ok());
    }

    #[test]
    fn argmax_follows_curvature_and_drift_signs() {
        let theta = box_1d(1.0, 2.0, 0.0);
        assert_eq!(theta.argmax_control(&[1.0], &[0.0]).unwrap().gamma, vec![2.0]);
        assert_eq!(theta.argmax_control(&[-1.0], &[0.0]).unwrap().gamma, vec![1.0]);
        // Zero curvature ties to the smaller corner.
        assert_eq!(theta.argmax_control(&[0.0], &[0.0]).unwrap().gamma, vec![1.0]);

        let with_drift = box_1d(1.0, 1.0, 0.5);
        assert_eq!(with_drift.argmax_control(&[0.0], &[2.0]).unwrap().mu, vec![0.5]);
        assert_eq!(with_drift.argmax_control(&[0.0], &[-2.0]).unwrap().mu, vec![-0.5]);
    }

    #[test]
    fn vertex_list_ties_resolve_to_lowest_index() {
        let c0 = ControlValue::new(vec![1.0], vec![0.5]).unwrap();
        let c1 = ControlValue::new(vec![1.0], vec![-0.5]).unwrap();
        let theta = UncertaintySet::vertex_list(vec![c0.clone(), c1]).unwrap();
        // p = 0 makes both controls equal; the first wins.
        assert_eq!(theta.argmax_control(&[1.0], &[0.0]).unwrap(), c0);
    }

    #[test]
    fn diag_box_vertices_enumerate_corners_in_order() {
        let theta = box_1d(1.0, 2.0, 0.5);
        let vs = theta.vertices();
        assert_eq!(vs.len(), 4);
        assert_eq!((vs[0].gamma[0], vs[0].mu[0]), (1.0, -0.5));
        assert_eq!((vs[1].gamma[0], vs[1].mu[0]), (1.0, 0.5));
        assert_eq!((vs[2].gamma[0], vs[2].mu[0]), (2.0, -0.5));
        assert_eq!((vs[3].gamma[0], vs[3].mu[0]), (2.0, 0.5));

        // Degenerate ranges collapse.
        assert_eq!(box_1d(1.0, 1.0, 0.0).vertices().len(), 1);
        let theta2 = UncertaintySet::diag_box(1.0, 2.0, vec![0.0, 0.0]).unwrap();
        assert_eq!(theta2.vertices().len(), 4);
    }

    #[test]
    fn vertex_max_matches_closed_form_for_diagonal_a() {
        let theta = UncertaintySet::diag_box(0.5, 1.5, vec![0.25, 1.0]).unwrap();
        let a = vec![0.8, 0.0, 0.0, -1.3];
        let p = vec![-0.7, 0.4];
        let by_formula = theta.eval_g(&a, &p).unwrap();
        let by_vertices = theta
            .vertices()
            .iter()
            .map(|c| c.support_value(&a, &p))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(by_formula, by_vertices, max_relative = 1e-14);
    }

    proptest! {
        #[test]
        fn positive_homogeneity(
            a in -5.0f64..5.0, p in -5.0f64..5.0, lambda in 0.0f64..10.0
        ) {
            let theta = box_1d(1.0, 2.0, 0.5);
            let g1 = theta.eval_g(&[lambda * a], &[lambda * p]).unwrap();
            let g2 = lambda * theta.eval_g(&[a], &[p]).unwrap();
            prop_assert!((g1 - g2).abs() <= 1e-12 * (1.0 + g2.abs()));
        }

        #[test]
        fn sublinearity(
            a1 in -5.0f64..5.0, a2 in -5.0f64..5.0,
            p1 in -5.0f64..5.0, p2 in -5.0f64..5.0
        ) {
            let theta = box_1d(1.0, 2.0, 0.5);
            let sum = theta.eval_g(&[a1 + a2], &[p1 + p2]).unwrap();
            let parts = theta.eval_g(&[a1], &[p1]).unwrap()
                + theta.eval_g(&[a2], &[p2]).unwrap();
            prop_assert!(sum <= parts + 1e-12 * (1.0 + parts.abs()));
        }

        #[test]
        fn monotone_in_the_matrix_slot(
            a in -5.0f64..5.0, bump in 0.0f64..5.0, p in -5.0f64..5.0
        ) {
            let theta = box_1d(1.0, 2.0, 0.5);
            let lo = theta.eval_g(&[a], &[p]).unwrap();
            let hi = theta.eval_g(&[a + bump], &[p]).unwrap();
            prop_assert!(hi >= lo - 1e-12 * (1.0 + lo.abs()));
        }

        #[test]
        fn ellipticity_sandwich(
            a1 in -5.0f64..5.0, gap in 0.0f64..5.0,
            p1 in -5.0f64..5.0, p2 in -5.0f64..5.0
        ) {
            // a1 >= a2 in the PSD order (1-D: plain order).
            let a2 = a1 - gap;
            let theta = box_1d(1.0, 2.0, 0.5);
            let params = theta.ellipticity_params();
            let diff = theta.eval_g(&[a1], &[p1]).unwrap()
                - theta.eval_g(&[a2], &[p2]).unwrap();
            let tr = a1 - a2;
            let dp = (p1 - p2).abs();
            let lower = 0.5 * params.sigma_low_sq * tr - params.beta * dp;
            let upper = 0.5 * params.sigma_high_sq * tr + params.beta * dp;
            prop_assert!(diff >= lower - 1e-10 && diff <= upper + 1e-10);
        }

        #[test]
        fn argmax_attains_the_supremum(
            a in -5.0f64..5.0, p in -5.0f64..5.0
        ) {
            let theta = box_1d(1.0, 2.0, 0.5);
            let g = theta.eval_g(&[a], &[p]).unwrap();
            let best = theta.argmax_control(&[a], &[p]).unwrap();
            prop_assert!((best.support_value(&[a], &[p]) - g).abs() <= 1e-12 * (1.0 + g.abs()));
        }

        #[test]
        fn vertex_list_monotone_under_psd_order(
            a11 in -3.0f64..3.0, a12 in -3.0f64..3.0, a22 in -3.0f64..3.0,
            c1 in -2.0f64..2.0, c2 in -2.0f64..2.0
        ) {
            // A1 = A2 + c c^T >= A2.
            let theta = UncertaintySet::vertex_list(vec![
                ControlValue::new(vec![1.0, 0.0, 0.3, 1.2], vec![0.1, -0.2]).unwrap(),
                ControlValue::new(vec![0.8, 0.1, 0.0, 1.0], vec![0.0, 0.0]).unwrap(),
            ]).unwrap();
            let a2 = vec![a11, a12, a12, a22];
            let a1 = vec![a11 + c1 * c1, a12 + c1 * c2, a12 + c1 * c2, a22 + c2 * c2];
            let p = vec![0.5, -0.5];
            let g1 = theta.eval_g(&a1, &p).unwrap();
            let g2 = theta.eval_g(&a2, &p).unwrap();
            prop_assert!(g1 >= g2 - 1e-10 * (1.0 + g2.abs()));
        }
    }
}
