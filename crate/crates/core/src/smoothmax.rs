//! Log-sum-exp regularization of the `ℓ`th largest gap: `Z_ℓ` is the `ℓ`th elementary
//! symmetric polynomial of the weights `w_j = exp(βν(v_{j+1} − v_j))`, and
//! `F_ℓ = (log Z_ℓ − log Z_{ℓ−1}) / β`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gaps::{check_ascending, nu};
use crate::mollifier::{plateau, transition, transition_sup_norms};
use crate::spectral::classical_locations;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationParams {
    pub beta: f64,
    pub gamma: f64,
    pub nu: f64,
    pub frak_a: f64,
}

impl RegularizationParams {
    /// `β = N^γ`, `ν = N/√log N`.
    pub fn for_n(n: usize, gamma: f64, frak_a: f64) -> Result<Self> {
        let p = Self { beta: (n as f64).powf(gamma), gamma, nu: nu(n)?, frak_a };
        p.validate()?;
        Ok(p)
    }

    /// Explicit inverse temperature; `γ = log β / log N`, `𝔞 = 0`.
    pub fn with_beta(n: usize, beta: f64) -> Result<Self> {
        let p = Self { beta, gamma: beta.ln() / (n as f64).ln(), nu: nu(n)?, frak_a: 0.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid("β must be positive"));
        }
        if !(self.frak_a >= 0.0 && self.gamma > self.frak_a) {
            return Err(invalid(format!("need γ > 𝔞 ≥ 0, got γ = {}, 𝔞 = {}", self.gamma, self.frak_a)));
        }
        Ok(())
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log e_k(w)` for `k = 0..=ell` from log-weights, by the recurrence
/// `e_k ← e_k + w·e_{k−1}` carried out in log space.
pub fn log_elementary_symmetric(lw: &[f64], ell: usize) -> Vec<f64> {
    let mut e = vec![f64::NEG_INFINITY; ell + 1];
    e[0] = 0.0;
    for (t, &x) in lw.iter().enumerate() {
        for k in (1..=ell.min(t + 1)).rev() {
            e[k] = log_add(e[k], x + e[k - 1]);
        }
    }
    e
}

fn log_weights(v: &[f64], j: &[usize], p: &RegularizationParams) -> Result<Vec<f64>> {
    check_ascending(v)?;
    let n = v.len();
    if let Some(bad) = j.iter().find(|&&x| x == 0 || x >= n) {
        return Err(invalid(format!("gap index {bad} outside [1, {}]", n.saturating_sub(1))));
    }
    Ok(j.iter().map(|&x| p.beta * p.nu * (v[x] - v[x - 1])).collect())
}

/// `log Z_{ℓ,β,J}(v)`; `J` is 1-based and `Z_0 = 1`.
pub fn z_ell(v: &[f64], j: &[usize], ell: usize, p: &RegularizationParams) -> Result<f64> {
    let lw = log_weights(v, j, p)?;
    Ok(log_elementary_symmetric(&lw, ell)[ell])
}

/// `F_{ℓ,β,J}(v)`, or 0 when `ℓ > |J|`.
pub fn f_ell(v: &[f64], j: &[usize], ell: usize, p: &RegularizationParams) -> Result<f64> {
    if ell == 0 {
        return Err(invalid("rank ℓ must be at least 1"));
    }
    let lw = log_weights(v, j, p)?;
    if ell > lw.len() {
        return Ok(0.0);
    }
    let e = log_elementary_symmetric(&lw, ell);
    Ok((e[ell] - e[ell - 1]) / p.beta)
}

/// Inclusion probabilities `π_j^{(r)} = w_j e_{r−1}(w∖j) / e_r(w)` for `r = 0..=ell`,
/// with leave-one-out sums assembled from prefix and suffix recurrences.
fn inclusion_probabilities(lw: &[f64], ell: usize) -> Vec<Vec<f64>> {
    let m = lw.len();
    let push = |e: &[f64], x: f64| {
        let mut e = e.to_vec();
        for k in (1..=ell).rev() {
            e[k] = log_add(e[k], x + e[k - 1]);
        }
        e
    };
    let empty = log_elementary_symmetric(&[], ell);
    let mut prefix = vec![empty.clone()];
    for t in 0..m {
        let next = push(&prefix[t], lw[t]);
        prefix.push(next);
    }
    let mut suffix = vec![empty; m + 1];
    for t in (0..m).rev() {
        suffix[t] = push(&suffix[t + 1], lw[t]);
    }
    let total = log_elementary_symmetric(lw, ell);
    let mut pi = vec![vec![0.0; m]; ell + 1];
    for jx in 0..m {
        for r in 1..=ell {
            if total[r] == f64::NEG_INFINITY {
                continue;
            }
            let mut loo = f64::NEG_INFINITY;
            for a in 0..r {
                loo = log_add(loo, prefix[jx][a] + suffix[jx + 1][r - 1 - a]);
            }
            pi[r][jx] = (lw[jx] + loo - total[r]).exp();
        }
    }
    pi
}

/// Analytic gradient `∂F/∂v_k`, a vector of length `N`.
pub fn grad_f(v: &[f64], j: &[usize], ell: usize, p: &RegularizationParams) -> Result<Vec<f64>> {
    if ell == 0 {
        return Err(invalid("rank ℓ must be at least 1"));
    }
    let lw = log_weights(v, j, p)?;
    let mut g = vec![0.0; v.len()];
    if ell > lw.len() {
        return Ok(g);
    }
    let pi = inclusion_probabilities(&lw, ell);
    for (t, &x) in j.iter().enumerate() {
        let d = p.nu * (pi[ell][t] - pi[ell - 1][t]);
        g[x] += d;
        g[x - 1] -= d;
    }
    Ok(g)
}

/// Empirical second-order constant `Σ_{jk} |∂_j∂_k F| / (β ν² ℓ²)` from central
/// differences of the analytic gradient.
pub fn second_order_constant(v: &[f64], j: &[usize], ell: usize, p: &RegularizationParams) -> Result<f64> {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let h = 1e-6 * scale / (p.beta * p.nu).max(1.0);
    let mut total = 0.0;
    for k in 0..v.len() {
        let mut up = v.to_vec();
        let mut dn = v.to_vec();
        up[k] += h;
        dn[k] -= h;
        if check_ascending(&up).is_err() || check_ascending(&dn).is_err() {
            continue;
        }
        let gu = grad_f(&up, j, ell, p)?;
        let gd = grad_f(&dn, j, ell, p)?;
        total += gu.iter().zip(&gd).map(|(a, b)| ((a - b) / (2.0 * h)).abs()).sum::<f64>();
    }
    Ok(total / (p.beta * p.nu * p.nu * (ell * ell) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CutoffKind {
    #[default]
    SmoothBump,
}

/// Cutoffs for the interval statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    #[serde(default)]
    pub kind: CutoffKind,
    pub eps_w: f64,
    pub eps_r: f64,
}

impl Default for CutoffSpec {
    fn default() -> Self {
        Self { kind: CutoffKind::SmoothBump, eps_w: 0.1, eps_r: 0.5 }
    }
}

/// Derivative sup-norms of the transition and the resulting cutoff scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    /// `sup |s^{(k)}|`, `k = 0..=5`.
    pub transition: [f64; 6],
    /// `sup |g^{(k)}|` for `g₁`, `g₂`: `(10 N^{1+ε_w})^k sup |s^{(k)}|`.
    pub g: [f64; 6],
}

/// `f₁`, `f₂`, `g₁`, `g₂` for one interval and dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffBundle {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    /// `N^{1+ε_w}`.
    pub scale: f64,
    /// 1-based window `J_r = [[i₀ − ⌈N^{ε_r}⌉, j₀ + ⌈N^{ε_r}⌉]] ∩ [1, N−1]`.
    pub window: (usize, usize),
}

/// `r`: 1 for `x ≤ 1/2`, 0 for `x ≥ 1`.
fn r_cut(x: f64) -> f64 {
    1.0 - transition(2.0 * x - 1.0)
}

/// `χ`: 1 for `y ≤ −1/2`, 0 for `y ≥ 1/2`.
fn chi(y: f64) -> f64 {
    1.0 - transition(y + 0.5)
}

impl CutoffBundle {
    fn endpoint_indicator(&self, v: &[f64], e: f64) -> f64 {
        let (lo, hi) = self.window;
        let s: f64 = (lo..=hi).map(|i| plateau(self.scale * (v[i - 1] - e))).sum();
        r_cut(s)
    }

    /// Vanishes once some `v_i`, `i ∈ J_r`, is within `N^{−1−ε_w}/2` of `a`.
    pub fn f1(&self, v: &[f64]) -> f64 {
        self.endpoint_indicator(v, self.a)
    }

    pub fn f2(&self, v: &[f64]) -> f64 {
        self.endpoint_indicator(v, self.b)
    }

    pub fn g1(&self, x: f64) -> f64 {
        chi(10.0 * self.scale * (self.a - x))
    }

    pub fn g2(&self, x: f64) -> f64 {
        chi(10.0 * self.scale * (x - self.b))
    }

    pub fn derivative_report(&self) -> DerivativeReport {
        let t = transition_sup_norms::<6>(20_000);
        let mut g = [0.0; 6];
        for k in 0..6 {
            g[k] = (10.0 * self.scale).powi(k as i32) * t[k];
        }
        DerivativeReport { transition: t, g }
    }
}

pub fn cutoff_functions(cut: &CutoffSpec, n: usize, a: f64, b: f64) -> Result<CutoffBundle> {
    if !(cut.eps_w > 0.0 && cut.eps_r > 0.0) {
        return Err(invalid("cutoff exponents must be positive"));
    }
    if !(a <= b && a > -2.0 && b < 2.0) {
        return Err(invalid(format!("interval [{a}, {b}] must lie inside (−2, 2)")));
    }
    let nf = n as f64;
    let gamma = classical_locations(n);
    let pad = nf.powf(cut.eps_r).ceil() as usize;
    let i0 = gamma.nearest_index(a);
    let j0 = gamma.nearest_index(b);
    let lo = i0.saturating_sub(pad).max(1);
    let hi = (j0 + pad).min(n - 1);
    Ok(CutoffBundle { n, a, b, scale: nf.powf(1.0 + cut.eps_w), window: (lo, hi) })
}

/// `F̂ = f₁ f₂ (log Ẑ_ℓ − log Ẑ_{ℓ−1}) / β` with
/// `Ẑ_ℓ = e_ℓ(g₁g₂(v_i) exp(νβ(v_{i+1} − v_i)) : i ∈ J_r)`.
pub fn f_hat(
    v: &[f64],
    a: f64,
    b: f64,
    ell: usize,
    p: &RegularizationParams,
    cut: &CutoffSpec,
) -> Result<f64> {
    check_ascending(v)?;
    if ell == 0 {
        return Err(invalid("rank ℓ must be at least 1"));
    }
    let bundle = cutoff_functions(cut, v.len(), a, b)?;
    f_hat_with(v, ell, p, &bundle)
}

pub fn f_hat_with(v: &[f64], ell: usize, p: &RegularizationParams, bundle: &CutoffBundle) -> Result<f64> {
    let front = bundle.f1(v) * bundle.f2(v);
    if front == 0.0 {
        return Ok(0.0);
    }
    let (lo, hi) = bundle.window;
    let lw: Vec<f64> = (lo..=hi)
        .map(|i| {
            let x = v[i - 1];
            (bundle.g1(x) * bundle.g2(x)).ln() + p.beta * p.nu * (v[i] - x)
        })
        .collect();
    let e = log_elementary_symmetric(&lw, ell);
    if e[ell] == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    Ok(front * (e[ell] - e[ell - 1]) / p.beta)
}

/// Whether no `v_i` lies within `dist` of `a` or `b`.
pub fn endpoint_clearance(v: &[f64], a: f64, b: f64, dist: f64) -> bool {
    v.iter().all(|&x| (x - a).abs() > dist && (x - b).abs() > dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaps::{interval_indices, t_ell_indices, t_hat_ell_raw};
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn params(n: usize, beta: f64) -> RegularizationParams {
        RegularizationParams::with_beta(n, beta).unwrap()
    }

    fn random_ascending(r: &mut impl Rng, n: usize) -> Vec<f64> {
        let mut acc = 0.0;
        (0..n)
            .map(|_| {
                acc += r.random::<f64>() / n as f64;
                acc
            })
            .collect()
    }

    #[test]
    fn small_closed_forms() {
        let p = params(10, 10.0);
        let v = [0.0, 0.0, 0.0];
        assert!((z_ell(&v, &[1, 2], 1, &p).unwrap() - 2f64.ln()).abs() < 1e-15);
        let lw = [0.0, 2f64.ln(), 3f64.ln()];
        assert!((log_elementary_symmetric(&lw, 2)[2] - 11f64.ln()).abs() < 1e-14);
        let g = 0.03;
        let f = f_ell(&[0.0, g], &[1], 1, &p).unwrap();
        assert!((f - p.nu * g).abs() < 1e-12);
        let f = f_ell(&[0.0, g, 2.0 * g], &[1, 2], 1, &p).unwrap();
        assert!((f - p.nu * g - 2f64.ln() / p.beta).abs() < 1e-12);
        assert_eq!(f_ell(&[0.0, g], &[1], 2, &p).unwrap(), 0.0);
    }

    #[test]
    fn z_matches_enumeration_for_ten_gaps() {
        let mut r = stream(17);
        let p = params(11, 20.0);
        let v = random_ascending(&mut r, 11);
        let j: Vec<usize> = (1..11).collect();
        let lw: Vec<f64> = j.iter().map(|&x| p.beta * p.nu * (v[x] - v[x - 1])).collect();
        let mut brute = 0.0;
        for a in 0..10 {
            for b in a + 1..10 {
                for c in b + 1..10 {
                    brute += (lw[a] + lw[b] + lw[c]).exp();
                }
            }
        }
        let z = z_ell(&v, &j, 3, &p).unwrap().exp();
        assert!((z - brute).abs() <= 1e-10 * brute);
    }

    #[test]
    fn equal_gaps_have_zero_middle_derivative() {
        let p = params(3, 50.0);
        let g = grad_f(&[0.0, 0.2, 0.4], &[1, 2], 1, &p).unwrap();
        assert!(g[1].abs() < 1e-12);
        assert!((g[0] + g[2]).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = stream(3);
        for trial in 0..10 {
            let n = 21;
            let v = random_ascending(&mut r, n);
            let j: Vec<usize> = (1..n).collect();
            let p = params(n, [5.0, 30.0, 100.0][trial % 3]);
            let ell = 1 + trial % 3;
            let g = grad_f(&v, &j, ell, &p).unwrap();
            let h = 1e-6 / n as f64;
            for k in 0..n {
                let mut up = v.clone();
                let mut dn = v.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (f_ell(&up, &j, ell, &p).unwrap() - f_ell(&dn, &j, ell, &p).unwrap()) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "k={k} fd={fd} g={}", g[k]);
            }
        }
    }

    #[test]
    fn second_order_constant_is_finite() {
        let mut r = stream(8);
        let v = random_ascending(&mut r, 15);
        let j: Vec<usize> = (1..15).collect();
        let c = second_order_constant(&v, &j, 2, &params(15, 10.0)).unwrap();
        assert!(c.is_finite() && c > 0.0);
    }

    #[test]
    fn cutoff_plateaus() {
        let cut = CutoffSpec { eps_w: 0.1, ..Default::default() };
        let n = 200;
        let b = cutoff_functions(&cut, n, -1.0, 1.0).unwrap();
        let w = 1.0 / b.scale;
        assert_eq!(b.g2(1.0 - w), 1.0);
        assert_eq!(b.g2(1.0 + w), 0.0);
        assert_eq!(b.g1(-1.0 + w), 1.0);
        assert_eq!(b.g1(-1.0 - w), 0.0);
        let gamma = classical_locations(n).gamma;
        let mut v = gamma.clone();
        if endpoint_clearance(&v, -1.0, 1.0, 2.0 * w) {
            assert_eq!(b.f1(&v) * b.f2(&v), 1.0);
        }
        let k = v.partition_point(|&x| x < -1.0);
        v[k] = -1.0 + 0.4 * w;
        v.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(b.f1(&v), 0.0);
        assert_eq!(f_hat(&v, -1.0, 1.0, 1, &params(n, 14.0), &cut).unwrap(), 0.0);
        let rep = b.derivative_report();
        assert!(rep.transition.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn f_hat_matches_restricted_statistic_with_clearance() {
        let n = 200;
        let p = RegularizationParams::for_n(n, 0.5, 0.0).unwrap();
        let cut = CutoffSpec::default();
        let ens = crate::EnsembleSpec::gue(n).build().unwrap();
        let mut checked = 0;
        for seed in 0..6 {
            let s = crate::spectral::eigenvalues(&ens.sample(seed), false).unwrap();
            let v = &s.lambda;
            let bundle = cutoff_functions(&cut, n, -1.0, 1.0).unwrap();
            if !endpoint_clearance(v, -1.0, 1.0, 2.0 / bundle.scale) {
                continue;
            }
            checked += 1;
            let fh = f_hat(v, -1.0, 1.0, 1, &p, &cut).unwrap();
            let t = t_hat_ell_raw(v, -1.0, 1.0, 1).unwrap();
            assert!((p.nu * t - fh).abs() <= 2.0 * (n as f64).ln() / p.beta);
            let idx = interval_indices(v, -1.0, 1.0);
            let f = f_ell(v, &idx, 1, &p).unwrap();
            assert!((f - fh).abs() <= 2.0 * (n as f64).ln() / p.beta);
            assert_eq!(t, t_ell_indices(v, &idx, 1).unwrap());
        }
        assert!(checked > 0);
    }

    fn ascending(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..0.05, 3..max_len).prop_map(|mut v| {
            let mut acc = 0.0;
            for x in v.iter_mut() {
                acc += *x;
                *x = acc;
            }
            v
        })
    }

    proptest! {
        #[test]
        fn entropy_bound(v in ascending(40), ell in 1usize..=4, bexp in 1i32..=3) {
            let n = v.len();
            let p = params(n, 10f64.powi(bexp));
            let j: Vec<usize> = (1..n).collect();
            let t = t_ell_indices(&v, &j, ell).unwrap();
            let f = f_ell(&v, &j, ell, &p).unwrap();
            prop_assert!((p.nu * t - f).abs() < 2.0 * ell as f64 * (n as f64).ln() / p.beta);
        }

        #[test]
        fn gradient_sums(v in ascending(30), ell in 1usize..=4, beta in 1.0f64..500.0) {
            let n = v.len();
            let p = params(n, beta.max(1.5));
            let j: Vec<usize> = (1..n).collect();
            let g = grad_f(&v, &j, ell, &p).unwrap();
            prop_assert!(g.iter().sum::<f64>().abs() <= 1e-10 * p.nu);
            prop_assert!(g.iter().map(|x| x.abs()).sum::<f64>() <= 2.0 * p.nu * ell as f64 * (1.0 + 1e-12));
        }

        #[test]
        fn convergence_in_beta(v in ascending(25), ell in 1usize..=3) {
            let n = v.len();
            let j: Vec<usize> = (1..n).collect();
            let t = t_ell_indices(&v, &j, ell).unwrap();
            for beta in [10.0, 100.0, 1000.0, 10000.0] {
                let p = params(n, beta);
                let d = (p.nu * t - f_ell(&v, &j, ell, &p).unwrap()).abs();
                prop_assert!(d <= 2.0 * ell as f64 * (n as f64).ln() / beta);
            }
        }
    }
}
