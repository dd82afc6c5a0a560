//! Extremal gap statistics, their scaling constants and the Gumbel-k family.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::spectral::bulk_range;

fn default_kappa() -> f64 {
    0.1
}

/// Which gaps enter an extremal statistic. Indices are 1-based: index `j` selects
/// the gap `v_{j+1} − v_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GapSelector {
    IndexSet {
        alpha: f64,
        /// Explicit index set; the whole bulk range when omitted.
        #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
        j: Option<Vec<usize>>,
    },
    #[serde(alias = "energy_interval")]
    Interval {
        a: f64,
        b: f64,
        #[serde(default = "default_kappa")]
        kappa: f64,
    },
}

impl GapSelector {
    pub fn bulk(alpha: f64) -> Self {
        GapSelector::IndexSet { alpha, j: None }
    }

    pub fn interval(a: f64, b: f64) -> Self {
        GapSelector::Interval { a, b, kappa: default_kappa() }
    }

    /// Resolved, validated index set for dimension `n`.
    pub fn indices(&self, n: usize) -> Result<Vec<usize>> {
        let GapSelector::IndexSet { alpha, j } = self else {
            return Err(invalid("selector is an interval, not an index set"));
        };
        if !(*alpha > 0.0 && *alpha < 0.5) {
            return Err(invalid(format!("alpha must lie in (0, 1/2), got {alpha}")));
        }
        let (lo, hi) = bulk_range(n, *alpha);
        let hi = hi.min(n.saturating_sub(1));
        match j {
            None => Ok((lo..=hi).collect()),
            Some(j) => {
                if j.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid("J must be strictly increasing"));
                }
                if let Some(bad) = j.iter().find(|&&x| x < lo || x > hi) {
                    return Err(invalid(format!("index {bad} outside the bulk range [{lo}, {hi}]")));
                }
                Ok(j.clone())
            }
        }
    }

    /// Validated interval `[a, b]`.
    pub fn bounds(&self) -> Result<(f64, f64)> {
        let GapSelector::Interval { a, b, kappa } = *self else {
            return Err(invalid("selector is an index set, not an interval"));
        };
        if !(kappa > 0.0) || !(a <= b) || a <= -2.0 + kappa || b >= 2.0 - kappa {
            return Err(invalid(format!("interval [{a}, {b}] must satisfy a ≤ b inside (−2+κ, 2−κ), κ = {kappa}")));
        }
        Ok((a, b))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            GapSelector::IndexSet { .. } => self.indices(n).map(|_| ()),
            GapSelector::Interval { .. } => self.bounds().map(|_| ()),
        }
    }
}

pub fn check_ascending(v: &[f64]) -> Result<()> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(invalid("vector contains NaN"));
    }
    if let Some(k) = v.windows(2).position(|w| w[0] > w[1]) {
        return Err(invalid(format!("vector is not ascending at position {}", k + 1)));
    }
    Ok(())
}

/// `ℓ`th largest of a multiset, or 0 when it has fewer than `ℓ` elements.
fn lth_largest(mut gaps: Vec<f64>, ell: usize) -> f64 {
    if ell == 0 || ell > gaps.len() {
        return 0.0;
    }
    gaps.sort_by(|a, b| b.total_cmp(a));
    gaps[ell - 1]
}

/// `𝒯_{ℓ,J}` for an explicit 1-based index set; only `1 ≤ j ≤ N−1` is checked.
pub fn t_ell_indices(v: &[f64], j: &[usize], ell: usize) -> Result<f64> {
    check_ascending(v)?;
    if ell == 0 {
        return Err(invalid("rank ℓ must be at least 1"));
    }
    let n = v.len();
    if let Some(bad) = j.iter().find(|&&x| x == 0 || x >= n) {
        return Err(invalid(format!("gap index {bad} outside [1, {}]", n.saturating_sub(1))));
    }
    Ok(lth_largest(j.iter().map(|&x| v[x] - v[x - 1]).collect(), ell))
}

/// `ℓ`th largest gap over the selector's index set (0 when `ℓ > |J|`).
pub fn t_ell(v: &[f64], sel: &GapSelector, ell: usize) -> Result<f64> {
    t_ell_indices(v, &sel.indices(v.len())?, ell)
}

/// 1-based indices `i ≤ N−1` with `v_i ∈ [a, b]`.
pub fn interval_indices(v: &[f64], a: f64, b: f64) -> Vec<usize> {
    let n = v.len();
    (1..n).filter(|&i| v[i - 1] >= a && v[i - 1] <= b).collect()
}

/// `ℓ`th largest gap `v_{i+1} − v_i` with `v_i ∈ I`.
pub fn t_hat_ell(v: &[f64], sel: &GapSelector, ell: usize) -> Result<f64> {
    let (a, b) = sel.bounds()?;
    t_hat_ell_raw(v, a, b, ell)
}

/// As [`t_hat_ell`] without the bulk-clearance check on the interval.
pub fn t_hat_ell_raw(v: &[f64], a: f64, b: f64, ell: usize) -> Result<f64> {
    check_ascending(v)?;
    if ell == 0 {
        return Err(invalid("rank ℓ must be at least 1"));
    }
    Ok(lth_largest(interval_indices(v, a, b).iter().map(|&i| v[i] - v[i - 1]).collect(), ell))
}

/// `ν = N / √(log N)`.
pub fn nu(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(invalid("ν needs N ≥ 2"));
    }
    let nf = n as f64;
    Ok(nf / nf.ln().sqrt())
}

/// `M(I) = inf_I √(4 − x²)`.
pub fn m_of_interval(a: f64, b: f64) -> Result<f64> {
    if !(a <= b && a > -2.0 && b < 2.0) {
        return Err(invalid(format!("interval [{a}, {b}] must lie inside (−2, 2)")));
    }
    let x = a.abs().max(b.abs());
    Ok((4.0 - x * x).sqrt())
}

/// `τ* = ¼ (2 log N)^{1/2} (M N gap − √(32 log N)) + (5/8) log(2 log N)`.
pub fn tau_star(gap: f64, n: usize, m: f64) -> f64 {
    let l = (n as f64).ln();
    0.25 * (2.0 * l).sqrt() * (m * n as f64 * gap - (32.0 * l).sqrt()) + 0.625 * (2.0 * l).ln()
}

/// Regularized upper incomplete gamma `Q(k, y)` for integer `k ≥ 1`.
pub fn upper_gamma_q(k: u32, y: f64) -> f64 {
    if y <= 0.0 {
        return 1.0;
    }
    let ly = y.ln();
    let mut lfact = 0.0;
    let mut s = 0.0;
    for j in 0..k {
        if j > 0 {
            lfact += (j as f64).ln();
        }
        s += (-y + j as f64 * ly - lfact).exp();
    }
    s.min(1.0)
}

/// `P(τ ≤ x) = Q(k, e^{c₂ − x})`.
pub fn gumbel_k_cdf(x: f64, k: u32, c2: f64) -> f64 {
    upper_gamma_q(k, (c2 - x).exp())
}

/// Density `e^{k(c₂−x)} / (k−1)! · exp(−e^{c₂−x})`.
pub fn gumbel_k_pdf(x: f64, k: u32, c2: f64) -> f64 {
    let u = c2 - x;
    let lfact: f64 = (1..k).map(|j| (j as f64).ln()).sum();
    (k as f64 * u - u.exp() - lfact).exp()
}

/// Maximum-likelihood location: `c₂ = log(n k / Σ e^{−x_i})`.
pub fn fit_gumbel_c2(xs: &[f64], k: u32) -> Result<f64> {
    if xs.is_empty() || xs.iter().any(|x| !x.is_finite()) {
        return Err(invalid("Gumbel fit needs finite samples"));
    }
    let m = xs.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    let lse = -m + xs.iter().map(|&x| (m - x).exp()).sum::<f64>().ln();
    Ok((xs.len() as f64 * k as f64).ln() - lse)
}

/// Draw from the Gumbel-k law: `c₂ − log G` with `G ~ Gamma(k, 1)`.
pub fn gumbel_k_sample<R: Rng + ?Sized>(k: u32, c2: f64, r: &mut R) -> f64 {
    let g = Gamma::new(k as f64, 1.0).expect("shape is positive").sample(r);
    c2 - g.ln()
}
