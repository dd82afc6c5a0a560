//! Spectra, semicircle reference quantities, Stieltjes transforms and the
//! rigidity / delocalization / local-law diagnostics.

use std::f64::consts::PI;
use std::sync::Once;

use faer::{c64, Mat, Side};
use serde::{Deserialize, Serialize};

use crate::ensembles::{Matrix, MatrixSample};
use crate::error::{invalid, Error, Result};
use crate::format::fmt_f64;

static SEQUENTIAL: Once = Once::new();

/// Dense factorizations run single-threaded; parallelism lives at the trial level.
pub(crate) fn sequential_linalg() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evec_supnorms: Option<Vec<f64>>,
    pub source_seed: u64,
}

impl Spectrum {
    pub fn from_values(mut lambda: Vec<f64>, source_seed: u64) -> Self {
        lambda.sort_by(|a, b| a.total_cmp(b));
        Self { lambda, evec_supnorms: None, source_seed }
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// CSV with columns `index,lambda,evec_supnorm` (1-based index; empty sup-norm when absent).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,lambda,evec_supnorm\n");
        for (k, l) in self.lambda.iter().enumerate() {
            let s = self
                .evec_supnorms
                .as_ref()
                .map(|v| fmt_f64(v[k]))
                .unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", k + 1, fmt_f64(*l), s));
        }
        out
    }
}

/// Eigenvalues with an orthonormal eigenbasis (columns, ascending order).
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub spectrum: Spectrum,
    vectors: Matrix,
}

impl Eigensystem {
    pub fn new(m: &MatrixSample) -> Result<Self> {
        sequential_linalg();
        let fail = || Error::EigenNoConvergence { seed: m.seed };
        let (lambda, vectors) = match &m.h {
            Matrix::Real(a) => {
                let e = a.self_adjoint_eigen(Side::Lower).map_err(|_| fail())?;
                let n = a.nrows();
                let order = ascending_order(n, |k| e.S()[k]);
                let vals: Vec<f64> = order.iter().map(|&k| e.S()[k]).collect();
                let u = e.U();
                let v = Mat::<f64>::from_fn(n, n, |i, k| u[(i, order[k])]);
                (vals, Matrix::Real(v))
            }
            Matrix::Complex(a) => {
                let e = a.self_adjoint_eigen(Side::Lower).map_err(|_| fail())?;
                let n = a.nrows();
                let order = ascending_order(n, |k| e.S()[k].re);
                let vals: Vec<f64> = order.iter().map(|&k| e.S()[k].re).collect();
                let u = e.U();
                let v = Mat::<c64>::from_fn(n, n, |i, k| u[(i, order[k])]);
                (vals, Matrix::Complex(v))
            }
        };
        if lambda.iter().any(|x| !x.is_finite()) {
            return Err(fail());
        }
        let n = lambda.len();
        let sup = (0..n)
            .map(|k| (0..n).fold(0.0f64, |s, i| s.max(vectors.get(i, k).norm())))
            .collect();
        Ok(Self {
            spectrum: Spectrum { lambda, evec_supnorms: Some(sup), source_seed: m.seed },
            vectors,
        })
    }

    /// Component `i` of the `k`th eigenvector.
    pub fn vector_entry(&self, i: usize, k: usize) -> c64 {
        self.vectors.get(i, k)
    }

    /// `G_ij(z) = Σ_k u_k(i) ū_k(j) / (λ_k − z)`.
    pub fn green_entry(&self, i: usize, j: usize, z: c64) -> Result<c64> {
        require_off_axis(z)?;
        let mut g = c64::new(0.0, 0.0);
        for (k, &l) in self.spectrum.lambda.iter().enumerate() {
            g += self.vectors.get(i, k) * self.vectors.get(j, k).conj() / (c64::new(l, 0.0) - z);
        }
        Ok(g)
    }

    /// `(1/N) tr G(z)` summed over diagonal resolvent entries.
    pub fn normalized_green_trace(&self, z: c64) -> Result<c64> {
        let n = self.spectrum.n();
        let mut t = c64::new(0.0, 0.0);
        for i in 0..n {
            t += self.green_entry(i, i, z)?;
        }
        Ok(t / n as f64)
    }
}

fn ascending_order(n: usize, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    order
}

/// Ascending spectrum of `m`; eigenvector sup-norms are filled when `want_vectors`.
pub fn eigenvalues(m: &MatrixSample, want_vectors: bool) -> Result<Spectrum> {
    if want_vectors {
        return Ok(Eigensystem::new(m)?.spectrum);
    }
    sequential_linalg();
    let fail = || Error::EigenNoConvergence { seed: m.seed };
    let vals = match &m.h {
        Matrix::Real(a) => a.self_adjoint_eigenvalues(Side::Lower).map_err(|_| fail())?,
        Matrix::Complex(a) => a.self_adjoint_eigenvalues(Side::Lower).map_err(|_| fail())?,
    };
    if vals.iter().any(|x| !x.is_finite()) {
        return Err(fail());
    }
    Ok(Spectrum::from_values(vals, m.seed))
}

pub fn rho_sc(e: f64) -> f64 {
    (4.0 - e * e).max(0.0).sqrt() / (2.0 * PI)
}

fn require_upper(z: c64) -> Result<()> {
    if z.im > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("need Im z > 0, got {z}")))
    }
}

fn require_off_axis(z: c64) -> Result<()> {
    if z.im != 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("need Im z ≠ 0, got {z}")))
    }
}

/// Root of `m² + z m + 1 = 0` with `Im m > 0`.
pub fn m_sc(z: c64) -> Result<c64> {
    require_upper(z)?;
    let s = (z * z - 4.0).sqrt();
    let r1 = (-z + s) / 2.0;
    let r2 = (-z - s) / 2.0;
    // The roots multiply to 1; take the larger directly and invert it for the other.
    let (big, _) = if r1.norm() >= r2.norm() { (r1, r2) } else { (r2, r1) };
    let small = big.inv();
    Ok(if big.im > small.im { big } else { small })
}

/// `Φ(x) = ∫_{−2}^{x} ρ_sc`.
pub fn semicircle_cdf(x: f64) -> f64 {
    if x <= -2.0 {
        return 0.0;
    }
    if x >= 2.0 {
        return 1.0;
    }
    0.5 + x * (4.0 - x * x).sqrt() / (4.0 * PI) + (x / 2.0).asin() / PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalLocations {
    pub n: usize,
    /// `gamma[i − 1] = γ_i`.
    pub gamma: Vec<f64>,
}

impl ClassicalLocations {
    /// `γ_i` for a 1-based index.
    pub fn get(&self, i: usize) -> f64 {
        self.gamma[i - 1]
    }

    /// 1-based index of the classical location nearest `e`.
    pub fn nearest_index(&self, e: f64) -> usize {
        let p = self.gamma.partition_point(|&g| g < e);
        let cand = [p.saturating_sub(1), p.min(self.n - 1)];
        let k = if (self.gamma[cand[0]] - e).abs() <= (self.gamma[cand[1]] - e).abs() {
            cand[0]
        } else {
            cand[1]
        };
        k + 1
    }
}

/// Solves `Φ(γ_i) = i/N` by bisection down to adjacent floating-point numbers.
pub fn classical_locations(n: usize) -> ClassicalLocations {
    let nf = n as f64;
    let gamma = (1..=n)
        .map(|i| {
            if i == n {
                return 2.0;
            }
            let target = i as f64 / nf;
            let (mut lo, mut hi) = (-2.0f64, 2.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if semicircle_cdf(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect();
    ClassicalLocations { n, gamma }
}

/// `m_N(z) = (1/N) Σ 1/(λ_i − z)`.
pub fn empirical_stieltjes(s: &Spectrum, z: c64) -> Result<c64> {
    require_off_axis(z)?;
    Ok(stieltjes_sum(&s.lambda, z))
}

pub(crate) fn stieltjes_sum(lambda: &[f64], z: c64) -> c64 {
    let mut acc = c64::new(0.0, 0.0);
    for &l in lambda {
        acc += (c64::new(l, 0.0) - z).inv();
    }
    acc / lambda.len() as f64
}

/// `G_ij(z)` from a fresh eigendecomposition of `m`.
pub fn green_entry(m: &MatrixSample, i: usize, j: usize, z: c64) -> Result<c64> {
    require_off_axis(z)?;
    Eigensystem::new(m)?.green_entry(i, j, z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidityReport {
    /// `max N|λ_i − γ_i|` over bulk indices.
    pub max_scaled_dev: f64,
    pub worst_index: usize,
    /// `max N^{2/3} min(i, N−i+1)^{1/3} |λ_i − γ_i|` over all indices.
    pub edge_adaptive_max: f64,
    pub edge_worst_index: usize,
}

/// 1-based bulk index range `[⌈αN⌉, ⌊(1−α)N⌋]`, clipped to `[1, N]`.
pub fn bulk_range(n: usize, alpha: f64) -> (usize, usize) {
    let nf = n as f64;
    let lo = ((alpha * nf).ceil() as usize).max(1);
    let hi = (((1.0 - alpha) * nf).floor() as usize).min(n);
    (lo, hi)
}

pub fn rigidity_report(s: &Spectrum, alpha: f64) -> Result<RigidityReport> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(format!("bulk fraction must lie in (0, 1/2), got {alpha}")));
    }
    let n = s.n();
    let nf = n as f64;
    let gamma = classical_locations(n);
    let (lo, hi) = bulk_range(n, alpha);
    let mut rep = RigidityReport { max_scaled_dev: 0.0, worst_index: lo, edge_adaptive_max: 0.0, edge_worst_index: 1 };
    for i in 1..=n {
        let d = (s.lambda[i - 1] - gamma.get(i)).abs();
        if (lo..=hi).contains(&i) && nf * d > rep.max_scaled_dev {
            rep.max_scaled_dev = nf * d;
            rep.worst_index = i;
        }
        let e = nf.powf(2.0 / 3.0) * (i.min(n - i + 1) as f64).cbrt() * d;
        if e > rep.edge_adaptive_max {
            rep.edge_adaptive_max = e;
            rep.edge_worst_index = i;
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelocalizationReport {
    /// `max √N ‖u_i‖_∞`.
    pub max_scaled: f64,
    pub worst_index: usize,
    /// Some eigenvector carries at least a quarter of its mass on one coordinate.
    pub localized: bool,
}

pub fn delocalization_report(s: &Spectrum) -> Result<DelocalizationReport> {
    let sup = s
        .evec_supnorms
        .as_ref()
        .ok_or_else(|| invalid("spectrum carries no eigenvector sup-norms"))?;
    let rootn = (s.n() as f64).sqrt();
    let (k, m) = sup
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bk, bm), (k, &v)| if v > bm { (k, v) } else { (bk, bm) });
    Ok(DelocalizationReport { max_scaled: rootn * m, worst_index: k + 1, localized: m >= 0.5 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDomainGrid {
    pub energies: Vec<f64>,
    pub etas: Vec<f64>,
    pub delta: f64,
}

impl SpectralDomainGrid {
    /// `n_e` equispaced energies on `[e_min, e_max]` and `n_eta` log-spaced
    /// `η ∈ [N^δ/N, 10]`.
    pub fn new(n: usize, delta: f64, (e_min, e_max): (f64, f64), n_e: usize, n_eta: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) || n_e < 2 || n_eta < 2 {
            return Err(invalid("grid needs 0 < delta < 1 and at least two points per axis"));
        }
        let nf = n as f64;
        let eta_min = nf.powf(delta) / nf;
        let energies = (0..n_e)
            .map(|k| e_min + (e_max - e_min) * k as f64 / (n_e - 1) as f64)
            .collect();
        let (l0, l1) = (eta_min.ln(), 10f64.ln());
        let etas = (0..n_eta)
            .map(|k| (l0 + (l1 - l0) * k as f64 / (n_eta - 1) as f64).exp())
            .collect();
        let g = Self { energies, etas, delta };
        g.validate(n)?;
        Ok(g)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let nf = n as f64;
        let eta_min = nf.powf(self.delta) / nf;
        let bad_e = self.energies.iter().any(|e| e.abs() > 10.0);
        let bad_eta = self.etas.iter().any(|&h| h < eta_min * (1.0 - 1e-12) || h > 10.0 * (1.0 + 1e-12));
        if bad_e || bad_eta {
            return Err(invalid("grid point outside the spectral domain"));
        }
        Ok(())
    }
}

/// `sup |m_N(z) − m_sc(z)| · Nη` over the grid.
pub fn local_law_sup(s: &Spectrum, grid: &SpectralDomainGrid) -> Result<f64> {
    let nf = s.n() as f64;
    let mut worst = 0.0f64;
    for &eta in &grid.etas {
        for &e in &grid.energies {
            let z = c64::new(e, eta);
            let d = (stieltjes_sum(&s.lambda, z) - m_sc(z)?).norm();
            worst = worst.max(d * nf * eta);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{sample_matrix, EnsembleSpec};
    use crate::quadrature::GaussLegendre;

    /// Number of eigenvalues below `x` of a symmetric matrix, from the signs of the
    /// pivots of an LDLᵀ factorization of `A − x` (Sylvester's law of inertia).
    fn count_below(a: &[Vec<f64>], x: f64) -> usize {
        let n = a.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        for (i, row) in m.iter_mut().enumerate() {
            row[i] -= x;
        }
        let mut neg = 0;
        for k in 0..n {
            let mut p = m[k][k];
            if p == 0.0 {
                p = 1e-300;
            }
            if p < 0.0 {
                neg += 1;
            }
            for i in k + 1..n {
                let f = m[i][k] / p;
                let (top, bottom) = m.split_at_mut(i);
                for (dst, src) in bottom[0][k + 1..].iter_mut().zip(&top[k][k + 1..]) {
                    *dst -= f * src;
                }
            }
        }
        neg
    }

    #[test]
    fn closed_form_spectra() {
        let s = eigenvalues(&MatrixSample::new(Matrix::diagonal(&[3.0, 1.0, 2.0]), 0), true).unwrap();
        assert_eq!(s.lambda, vec![1.0, 2.0, 3.0]);
        let swap = Matrix::from_real_fn(2, |i, j| if i == j { 0.0 } else { 1.0 });
        let s = eigenvalues(&MatrixSample::new(swap, 0), true).unwrap();
        assert!((s.lambda[0] + 1.0).abs() < 1e-15 && (s.lambda[1] - 1.0).abs() < 1e-15);
        assert!((delocalization_report(&s).unwrap().max_scaled - 1.0).abs() < 1e-12);
        let id = eigenvalues(&MatrixSample::new(Matrix::diagonal(&[1.0; 9]), 0), true).unwrap();
        let d = delocalization_report(&id).unwrap();
        assert!((d.max_scaled - 3.0).abs() < 1e-12 && d.localized);
        assert!(delocalization_report(&Spectrum::from_values(vec![0.0], 0)).is_err());
    }

    #[test]
    fn goe8_matches_inertia_bisection() {
        let ens = EnsembleSpec::goe(8).build().unwrap();
        let m = sample_matrix(&ens, 2024);
        let a: Vec<Vec<f64>> = (0..8).map(|i| (0..8).map(|j| m.h.get(i, j).re).collect()).collect();
        let s = eigenvalues(&m, false).unwrap();
        for k in 0..8 {
            let (mut lo, mut hi) = (-10.0f64, 10.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if count_below(&a, mid) > k {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            assert!((s.lambda[k] - 0.5 * (lo + hi)).abs() < 1e-10, "eigenvalue {k}");
        }
    }

    #[test]
    fn trace_consistency() {
        let ens = EnsembleSpec::gue(60).build().unwrap();
        let m = sample_matrix(&ens, 3);
        let s = eigenvalues(&m, false).unwrap();
        let n = 60.0;
        assert!((s.lambda.iter().sum::<f64>() - m.h.trace()).abs() <= n * 1e-10 * (1.0 + m.h.frobenius()));
        assert!(s.lambda.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn semicircle_values() {
        assert!((rho_sc(0.0) - 1.0 / PI).abs() < 1e-15);
        assert_eq!(rho_sc(2.0), 0.0);
        assert_eq!(rho_sc(-2.0), 0.0);
        assert!((rho_sc(1.0) - 0.2756645).abs() < 1e-7);
        let m = m_sc(c64::new(0.0, 1.0)).unwrap();
        assert!(m.re.abs() < 1e-15 && (m.im - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
        assert!(m_sc(c64::new(1.0, 0.0)).is_err());
        let z = c64::new(0.0, 1e6);
        assert!((m_sc(z).unwrap() * z + 1.0).norm() < 1e-10);
    }

    #[test]
    fn m_sc_matches_quadrature() {
        let z = c64::new(0.5, 0.1);
        // x = 2 sin θ removes the square-root endpoints.
        let g = GaussLegendre::new(64);
        let breaks: Vec<f64> = (0..=64).map(|k| -PI / 2.0 + PI * k as f64 / 64.0).collect();
        let re = g.composite(&breaks, |t| {
            let x = 2.0 * t.sin();
            let w = 2.0 * t.cos() * rho_sc(x);
            (w / (c64::new(x, 0.0) - z)).re
        });
        let im = g.composite(&breaks, |t| {
            let x = 2.0 * t.sin();
            let w = 2.0 * t.cos() * rho_sc(x);
            (w / (c64::new(x, 0.0) - z)).im
        });
        let m = m_sc(z).unwrap();
        assert!((m - c64::new(re, im)).norm() < 1e-8, "{m} vs {re}+{im}i");
    }

    #[test]
    fn m_sc_quadratic_residual() {
        for &(x, y) in &[(0.0, 1e-8), (1.9, 1e-3), (-3.0, 0.5), (10.0, 10.0), (0.3, 0.01)] {
            let z = c64::new(x, y);
            let m = m_sc(z).unwrap();
            assert!(m.im > 0.0);
            assert!((m * m + z * m + 1.0).norm() <= 1e-12);
        }
    }

    #[test]
    fn classical_location_properties() {
        let g = classical_locations(4);
        assert!((g.get(1) + 0.807945507).abs() < 1e-8);
        assert!(g.get(2).abs() < 1e-14);
        assert_eq!(g.get(4), 2.0);
        let n = 501;
        let g = classical_locations(n);
        for i in 1..=n {
            assert!((semicircle_cdf(g.get(i)) - i as f64 / n as f64).abs() <= 1e-10);
        }
        assert!(g.gamma.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g.nearest_index(0.0), 251);
    }

    #[test]
    fn stieltjes_and_green() {
        let s = Spectrum::from_values(vec![-1.0, 1.0], 0);
        let m = empirical_stieltjes(&s, c64::new(0.0, 1.0)).unwrap();
        assert!((m - c64::new(0.0, 0.5)).norm() < 1e-15);
        assert!(empirical_stieltjes(&s, c64::new(0.0, 0.0)).is_err());
        let d = MatrixSample::new(Matrix::diagonal(&[1.0, 2.0]), 0);
        let g = green_entry(&d, 0, 0, c64::new(0.0, 1.0)).unwrap();
        assert!((g - c64::new(0.5, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn ward_identity_and_trace() {
        let ens = EnsembleSpec::gue(50).build().unwrap();
        let m = sample_matrix(&ens, 8);
        let es = Eigensystem::new(&m).unwrap();
        let z = c64::new(0.2, 0.05);
        for i in [0, 17, 49] {
            let lhs: f64 = (0..50).map(|j| es.green_entry(i, j, z).unwrap().norm_sqr()).sum();
            let rhs = es.green_entry(i, i, z).unwrap().im / z.im;
            assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs());
            let g = es.green_entry(i, 3, z).unwrap();
            let h = es.green_entry(3, i, z.conj()).unwrap();
            assert!((g - h.conj()).norm() < 1e-12);
        }
        let a = es.normalized_green_trace(z).unwrap();
        let b = empirical_stieltjes(&es.spectrum, z).unwrap();
        assert!((a - b).norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn rigidity_constructed_inputs() {
        let n = 200;
        let g = classical_locations(n);
        let s = Spectrum::from_values(g.gamma.clone(), 0);
        assert_eq!(rigidity_report(&s, 0.1).unwrap().max_scaled_dev, 0.0);
        let shifted = Spectrum::from_values(g.gamma.iter().map(|x| x + 1.0 / n as f64).collect(), 0);
        assert!((rigidity_report(&shifted, 0.1).unwrap().max_scaled_dev - 1.0).abs() < 1e-9);
        assert!(rigidity_report(&s, 0.6).is_err());
    }

    #[test]
    fn grid_respects_domain() {
        let g = SpectralDomainGrid::new(1000, 0.1, (-10.0, 10.0), 11, 5).unwrap();
        assert!((g.etas[0] - 1000f64.powf(-0.9)).abs() < 1e-15);
        assert!(g.validate(1000).is_ok());
        let mut bad = g.clone();
        bad.etas[0] = 1e-6;
        assert!(bad.validate(1000).is_err());
    }

    #[test]
    fn spectrum_csv() {
        let mut s = Spectrum::from_values(vec![0.5, -0.25], 1);
        assert_eq!(s.to_csv(), "index,lambda,evec_supnorm\n1,-0.25,\n2,0.5,\n");
        s.evec_supnorms = Some(vec![1.0, 0.1]);
        assert!(s.to_csv().ends_with("2,0.5,0.1\n"));
    }
}
