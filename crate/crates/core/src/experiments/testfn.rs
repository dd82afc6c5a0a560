//! Smooth test functions `S` applied to scaled gap statistics.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mollifier::{transition_jet, Jet};

fn default_domain() -> (f64, f64) {
    (0.0, 8.0)
}

/// A test function together with the range on which its derivative sup-norms are taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionSpec {
    #[serde(flatten)]
    pub kind: TestFunctionKind,
    /// Range of the statistic over which `sup |S^{(d)}|` is evaluated.
    #[serde(default = "default_domain")]
    pub domain: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunctionKind {
    /// `Σ_k c_k x^k`.
    Polynomial { coeffs: Vec<f64> },
    /// `((x − c)² + w²)^{p/2}` with `w = N^{−ε}`.
    SmoothedLp { p: f64, center: f64, eps: f64 },
    /// 1 on `[a, b]`, 0 outside `[a − w, b + w]`, `w = N^{−ε}`.
    SmoothedIndicator { a: f64, b: f64, eps: f64 },
}

impl Default for TestFunctionSpec {
    fn default() -> Self {
        Self { kind: TestFunctionKind::SmoothedLp { p: 2.0, center: 1.0, eps: 0.1 }, domain: default_domain() }
    }
}

/// Grid resolution for the sup-norm scan.
const SUP_GRID: usize = 4000;

impl TestFunctionSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(invalid(format!("test function domain ({lo}, {hi}) is empty")));
        }
        match &self.kind {
            TestFunctionKind::Polynomial { coeffs } if coeffs.is_empty() => {
                Err(invalid("polynomial test function needs coefficients"))
            }
            TestFunctionKind::SmoothedLp { p, eps, .. } if !(*p > 0.0 && *eps >= 0.0) => {
                Err(invalid("smoothed L^p needs p > 0 and ε ≥ 0"))
            }
            TestFunctionKind::SmoothedIndicator { a, b, eps } if !(a <= b && *eps >= 0.0) => {
                Err(invalid("smoothed indicator needs a ≤ b and ε ≥ 0"))
            }
            _ => Ok(()),
        }
    }

    /// Transition width `N^{−ε}` for the smoothed kinds.
    pub fn width(&self, n: usize) -> Option<f64> {
        match &self.kind {
            TestFunctionKind::Polynomial { .. } => None,
            TestFunctionKind::SmoothedLp { eps, .. } | TestFunctionKind::SmoothedIndicator { eps, .. } => {
                Some((n as f64).powf(-eps))
            }
        }
    }

    fn jet<const K: usize>(&self, x: f64, n: usize) -> Jet<K> {
        let v = Jet::<K>::variable(x);
        match &self.kind {
            TestFunctionKind::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(Jet::constant(0.0), |acc, &c| acc * v + Jet::constant(c))
            }
            TestFunctionKind::SmoothedLp { p, center, .. } => {
                let w = self.width(n).unwrap_or(0.0);
                let d = v.offset(-center);
                (d * d).offset(w * w).powf(0.5 * p)
            }
            TestFunctionKind::SmoothedIndicator { a, b, .. } => {
                let w = self.width(n).unwrap_or(0.0);
                let rise = transition_jet(v.offset(w - a).scale(1.0 / w));
                let fall = Jet::constant(1.0) - transition_jet(v.offset(-b).scale(1.0 / w));
                rise * fall
            }
        }
    }

    pub fn eval(&self, x: f64, n: usize) -> f64 {
        self.jet::<1>(x, n).value()
    }

    /// `sup |S^{(d)}|` over the domain for `d = 0..=5`.
    pub fn sup_norms(&self, n: usize) -> [f64; 6] {
        let (lo, hi) = self.domain;
        let mut out = [0.0f64; 6];
        for g in 0..=SUP_GRID {
            let x = lo + (hi - lo) * g as f64 / SUP_GRID as f64;
            let d = self.jet::<6>(x, n).derivatives();
            for k in 0..6 {
                out[k] = out[k].max(d[k].abs());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: TestFunctionKind) -> TestFunctionSpec {
        TestFunctionSpec { kind, domain: (-3.0, 3.0) }
    }

    #[test]
    fn polynomial_values_and_derivatives() {
        let s = spec(TestFunctionKind::Polynomial { coeffs: vec![1.0, 0.0, 2.0] });
        assert_eq!(s.eval(2.0, 10), 9.0);
        let sup = s.sup_norms(10);
        assert_eq!(sup[0], 19.0);
        assert_eq!(sup[1], 12.0);
        assert_eq!(sup[2], 4.0);
        assert_eq!(sup[3], 0.0);
    }

    #[test]
    fn smoothed_l2_is_shifted_square() {
        let s = spec(TestFunctionKind::SmoothedLp { p: 2.0, center: 1.0, eps: 0.5 });
        let w2 = 1.0 / 100.0;
        assert!((s.eval(3.0, 100) - (4.0 + w2)).abs() < 1e-12);
        let sup = s.sup_norms(100);
        assert!((sup[2] - 2.0).abs() < 1e-9);
        assert!(sup[3].abs() < 1e-9);
    }

    #[test]
    fn smoothed_l1_derivatives_grow_like_inverse_width() {
        let s = spec(TestFunctionKind::SmoothedLp { p: 1.0, center: 0.0, eps: 0.5 });
        let (a, b) = (s.sup_norms(100), s.sup_norms(10_000));
        // S'' peaks at 1/w at the center.
        assert!((a[2] - 10.0).abs() < 1e-6);
        assert!((b[2] - 100.0).abs() < 1e-6);
        assert!(b[4] / a[4] > 900.0);
    }

    #[test]
    fn indicator_shape() {
        let s = spec(TestFunctionKind::SmoothedIndicator { a: -1.0, b: 1.0, eps: 1.0 });
        let n = 10;
        assert_eq!(s.eval(0.0, n), 1.0);
        assert_eq!(s.eval(-1.0, n), 1.0);
        assert_eq!(s.eval(1.0, n), 1.0);
        assert_eq!(s.eval(1.1, n), 0.0);
        assert_eq!(s.eval(-1.1, n), 0.0);
        assert!((s.eval(1.05, n) - 0.5).abs() < 1e-12);
        let sup = s.sup_norms(n);
        assert_eq!(sup[0], 1.0);
        assert!(sup[1] > 10.0);
    }

    #[test]
    fn json_shape() {
        let s: TestFunctionSpec =
            serde_json::from_str(r#"{"kind":"smoothed_lp","p":2,"center":1,"eps":0.1}"#).unwrap();
        assert_eq!(s.domain, (0.0, 8.0));
        s.validate().unwrap();
        let back: TestFunctionSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
