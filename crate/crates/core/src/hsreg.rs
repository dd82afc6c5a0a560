//! Regularized eigenvalues built from a smoothed counting function and its
//! Helffer–Sjöstrand representation, plus finite-difference entry probes.
//!
//! For a spectrum `λ` the representation splits `tr f_E(H)` into
//! `A_E + B_E + D₁ + D₂`, where `D₁` is the `σ < η₂` part of the
//! `σ f″ χ Im m` integral and `D₂` the boundary term produced by moving the
//! `e`-derivative onto `σ` along `σ = η₂`. `F_E = A_E + B_E` is the smooth
//! counting estimate from which `λ̃_i` is built.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ensembles::{MatrixSample, Part};
use crate::error::{invalid, Error, Result};
use crate::format::fmt_f64;
use crate::mollifier::{transition, transition_derivatives};
use crate::quadrature::GaussLegendre;
use crate::spectral::{bulk_range, classical_locations, eigenvalues, Spectrum};

fn default_n_e() -> usize {
    16
}
fn default_n_sigma() -> usize {
    200
}
fn default_sigma_max() -> f64 {
    2.0
}
fn default_alpha() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadControls {
    /// Gauss–Legendre points per energy panel.
    #[serde(default = "default_n_e")]
    pub n_e: usize,
    /// Log-spaced σ panels between `η₂` and `sigma_max`.
    #[serde(default = "default_n_sigma")]
    pub n_sigma: usize,
    #[serde(default = "default_sigma_max")]
    pub sigma_max: f64,
}

impl Default for QuadControls {
    fn default() -> Self {
        Self { n_e: default_n_e(), n_sigma: default_n_sigma(), sigma_max: default_sigma_max() }
    }
}

/// Exponents of the construction. `η₁ = N^{−1−δ}`, `η₂ = N^{−δ}/N` and
/// `ε₁ = ε/2` are derived on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HSParams {
    pub delta: f64,
    pub eps: f64,
    /// Bulk margin: admissible indices are `⌈αN⌉..=⌊(1−α)N⌋`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub quad: QuadControls,
}

impl HSParams {
    pub fn new(delta: f64, eps: f64) -> Result<Self> {
        let p = Self { delta, eps, alpha: default_alpha(), quad: QuadControls::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(invalid(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(invalid(format!("alpha must lie in (0, 1/2), got {}", self.alpha)));
        }
        if self.quad.n_e < 2 || self.quad.n_sigma < 1 {
            return Err(invalid("quadrature needs n_e ≥ 2 and n_sigma ≥ 1"));
        }
        if self.quad.sigma_max != 2.0 {
            return Err(invalid("sigma_max must equal 2, the support edge of χ"));
        }
        Ok(())
    }

    pub fn eta1(&self, n: usize) -> f64 {
        (n as f64).powf(-1.0 - self.delta)
    }

    pub fn eta2(&self, n: usize) -> f64 {
        (n as f64).powf(-self.delta) / n as f64
    }

    pub fn eps1(&self) -> f64 {
        0.5 * self.eps
    }

    /// `⌈1.5 N^{ε₁}⌉`, the distance from `i` to either window index.
    pub fn window_offset(&self, n: usize) -> usize {
        (1.5 * (n as f64).powf(self.eps1())).ceil() as usize
    }

    /// Window indices `(j, k)` for bulk index `i` (1-based).
    pub fn window_indices(&self, n: usize, i: usize) -> Result<(usize, usize)> {
        let (lo, hi) = bulk_range(n, self.alpha);
        let off = self.window_offset(n);
        if i < lo || i > hi || i <= off || i + off > n {
            return Err(invalid(format!(
                "index {i} with window offset {off} leaves the bulk range [{lo}, {hi}] of N = {n}"
            )));
        }
        Ok((i - off, i + off))
    }
}

/// `f_E(x) = 1 − s((x − E)/η₁)`: 1 below `E`, 0 above `E + η₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountingKernel {
    pub e: f64,
    pub eta1: f64,
}

impl CountingKernel {
    pub fn eval(&self, x: f64) -> f64 {
        1.0 - transition((x - self.e) / self.eta1)
    }

    /// `[f, f′, f″, f‴]` at `x`.
    pub fn derivatives(&self, x: f64) -> [f64; 4] {
        let d = transition_derivatives::<4>((x - self.e) / self.eta1);
        let h = 1.0 / self.eta1;
        [1.0 - d[0], -d[1] * h, -d[2] * h * h, -d[3] * h * h * h]
    }
}

pub fn smoothed_counting_kernel(e_center: f64, eta1: f64) -> Result<CountingKernel> {
    if !(eta1 > 0.0 && eta1.is_finite() && e_center.is_finite()) {
        return Err(invalid(format!("kernel needs finite E and η₁ > 0, got E = {e_center}, η₁ = {eta1}")));
    }
    Ok(CountingKernel { e: e_center, eta1 })
}

/// `(χ(σ), χ′(σ))` for `σ ≥ 0`, with `χ = 1 − s(σ − 1)`.
fn chi(sigma: f64) -> (f64, f64) {
    let d = transition_derivatives::<2>(sigma - 1.0);
    (1.0 - d[0], -d[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsTerms {
    pub a_e: f64,
    pub b_e: f64,
    /// Small-σ bulk remainder `D₁`.
    pub d1: f64,
    /// Boundary term `D₂` along `σ = η₂`.
    pub d2: f64,
    /// `D₁ + D₂`.
    pub dropped: f64,
    /// `Σ f_E(λ_a)` from the eigenvalues.
    pub trace_direct: f64,
    /// Change of the total when the per-panel rule is halved.
    pub quad_error_estimate: f64,
}

impl HsTerms {
    /// `A + B + dropped − tr f_E`.
    pub fn identity_defect(&self) -> f64 {
        self.a_e + self.b_e + self.dropped - self.trace_direct
    }

    /// Refuses results whose refinement estimate exceeds `tol`.
    pub fn check(&self, tol: f64) -> Result<()> {
        if self.quad_error_estimate > tol || !self.quad_error_estimate.is_finite() {
            return Err(Error::Numerical(format!(
                "Helffer–Sjöstrand quadrature estimate {:e} above tolerance {:e}",
                self.quad_error_estimate, tol
            )));
        }
        Ok(())
    }
}

/// Breakpoints on `[lo, hi]`: uniform panels of width `base`, refined near each
/// eigenvalue at offsets `c·η` so kinks and Lorentzian peaks sit on panel edges.
fn aligned_breaks(lo: f64, hi: f64, base: f64, lam: &[f64], eta: f64) -> Vec<f64> {
    const OFFSETS: [f64; 7] = [-4.0, -1.0, -0.25, 0.0, 0.25, 1.0, 4.0];
    let panels = ((hi - lo) / base).ceil().max(1.0) as usize;
    let mut b: Vec<f64> = (0..=panels).map(|k| lo + (hi - lo) * k as f64 / panels as f64).collect();
    let start = lam.partition_point(|&x| x < lo - 4.0 * eta);
    for &l in &lam[start..] {
        if l > hi + 4.0 * eta {
            break;
        }
        b.extend(OFFSETS.iter().map(|c| l + c * eta).filter(|&x| x > lo && x < hi));
    }
    sort_dedup(&mut b, 1e-15 * (hi - lo).abs().max(base));
    b
}

fn sort_dedup(b: &mut Vec<f64>, tol: f64) {
    b.sort_by(|x, y| x.total_cmp(y));
    b.dedup_by(|x, y| (*x - *y).abs() <= tol);
}

fn log_spaced(lo: f64, hi: f64, panels: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..=panels).map(|k| (a + (b - a) * k as f64 / panels as f64).exp()).collect()
}

struct HsRaw {
    a: f64,
    b: f64,
    d1: f64,
    d2: f64,
}

fn hs_raw(lam: &[f64], f: &CountingKernel, eta2: f64, gl: &GaussLegendre, sigma_breaks: &[f64]) -> HsRaw {
    let (e0, e1) = (f.e, f.e + f.eta1);
    let e_breaks = aligned_breaks(e0, e1, 0.25 * f.eta1, lam, eta2.min(f.eta1));
    let e_nodes: Vec<(f64, f64, [f64; 4])> = e_breaks
        .windows(2)
        .flat_map(|p| gl.mapped(p[0], p[1]).collect::<Vec<_>>())
        .map(|(e, w)| (e, w, f.derivatives(e)))
        .collect();
    let s_nodes: Vec<(f64, f64)> = sigma_breaks
        .windows(2)
        .flat_map(|p| gl.mapped(p[0], p[1]).collect::<Vec<_>>())
        .collect();

    let mut a = 0.0;
    for &(s, ws) in &s_nodes {
        let (_, dchi) = chi(s);
        if dchi == 0.0 {
            continue;
        }
        let plateau: f64 = lam.iter().map(|&l| 0.5 * PI + ((f.e - l) / s).atan()).sum();
        let mut im_part = plateau;
        let mut re_part = 0.0;
        for &(e, we, d) in &e_nodes {
            let (mut im, mut re) = (0.0, 0.0);
            for &l in lam {
                let u = l - e;
                let q = 1.0 / (u * u + s * s);
                im += s * q;
                re += u * q;
            }
            im_part += we * d[0] * im;
            re_part += we * d[1] * re;
        }
        a += ws * (-dchi * im_part - s * dchi * re_part);
    }

    let (mut b, mut d1, mut d2) = (0.0, 0.0, 0.0);
    let s_weights: Vec<(f64, f64, f64)> = s_nodes
        .iter()
        .map(|&(s, ws)| {
            let (c, dc) = chi(s);
            (s, ws, c + s * dc)
        })
        .collect();
    for &(e, we, d) in &e_nodes {
        let (mut low, mut d1e, mut d2e) = (0.0, 0.0, 0.0);
        for &l in lam {
            let u = l - e;
            low += ((1.0 - eta2) * u / (u * u + eta2)).atan();
            d2e += u / (u * u + eta2 * eta2);
            let au = u.abs();
            d1e += if au == 0.0 { eta2 } else { eta2 - au * (eta2 / au).atan() };
        }
        let mut high = 0.0;
        for &(s, ws, g) in &s_weights {
            let re: f64 = lam.iter().map(|&l| {
                let u = l - e;
                u / (u * u + s * s)
            }).sum();
            high += ws * g * re;
        }
        b += we * d[1] * (low + high);
        d2 += we * d[1] * d2e;
        d1 += we * d[2] * d1e;
    }
    HsRaw { a: a / PI, b: b / PI, d1: -d1 / PI, d2: eta2 * d2 / PI }
}

/// Evaluates `A_E`, `B_E` and the dropped terms by direct quadrature of the
/// resolvent trace built from `s`, plus the direct trace for comparison.
pub fn hs_functional(s: &Spectrum, f: &CountingKernel, p: &HSParams) -> Result<HsTerms> {
    p.validate()?;
    let n = s.n();
    if n < 2 {
        return Err(invalid("spectrum needs at least two eigenvalues"));
    }
    let eta2 = p.eta2(n);
    if eta2 >= 1.0 {
        return Err(invalid("η₂ must be below 1"));
    }
    let mut sigma_breaks: Vec<f64> = log_spaced(eta2, p.quad.sigma_max, p.quad.n_sigma)
        .into_iter()
        .filter(|&x| x > 1.0)
        .collect();
    sigma_breaks.insert(0, 1.0);
    let fine = hs_raw(&s.lambda, f, eta2, &GaussLegendre::new(p.quad.n_e), &sigma_breaks);
    let coarse = hs_raw(&s.lambda, f, eta2, &GaussLegendre::new((p.quad.n_e / 2).max(2)), &sigma_breaks);
    let total = |r: &HsRaw| r.a + r.b + r.d1 + r.d2;
    let err = (total(&fine) - total(&coarse)).abs()
        + (fine.a - coarse.a).abs()
        + (fine.b - coarse.b).abs();
    Ok(HsTerms {
        a_e: fine.a,
        b_e: fine.b,
        d1: fine.d1,
        d2: fine.d2,
        dropped: fine.d1 + fine.d2,
        trace_direct: s.lambda.iter().map(|&l| f.eval(l)).sum(),
        quad_error_estimate: err,
    })
}

/// [`hs_functional`] on the spectrum of a matrix.
pub fn hs_functional_matrix(m: &MatrixSample, f: &CountingKernel, p: &HSParams) -> Result<HsTerms> {
    hs_functional(&eigenvalues(m, false)?, f, p)
}

/// Per-eigenvalue contribution `Φ(t)` to `F_E = A_E + B_E`, where `t = λ − E`.
/// Since `A + B = tr f − D₁ − D₂` exactly, `Φ(t) = f₀(t) − D₁(t) − D₂(t)` with
/// one-dimensional integrals over the transition window `[0, η₁]`.
struct PoleKernel {
    eta1: f64,
    eta2: f64,
    gl: GaussLegendre,
    /// `(e, w·f′(e), w·f″(e))` on four panels of `[0, η₁]`.
    mid: Vec<(f64, f64, f64)>,
    /// The same on a single panel, for distant poles.
    far: Vec<(f64, f64, f64)>,
}

impl PoleKernel {
    const NEAR: f64 = 8.0;
    const FAR: f64 = 64.0;

    fn new(eta1: f64, eta2: f64, n_e: usize) -> Self {
        let gl = GaussLegendre::new(n_e);
        let f = CountingKernel { e: 0.0, eta1 };
        let tab = |breaks: &[f64]| -> Vec<(f64, f64, f64)> {
            breaks
                .windows(2)
                .flat_map(|p| gl.mapped(p[0], p[1]).collect::<Vec<_>>())
                .map(|(e, w)| {
                    let d = f.derivatives(e);
                    (e, w * d[1], w * d[2])
                })
                .collect()
        };
        let mid = tab(&[0.0, 0.25 * eta1, 0.5 * eta1, 0.75 * eta1, eta1]);
        let far = tab(&[0.0, eta1]);
        Self { eta1, eta2, gl, mid, far }
    }

    fn integrand(&self, t: f64, e: f64) -> (f64, f64) {
        let u = t - e;
        let au = u.abs();
        let d1 = if au == 0.0 { self.eta2 } else { self.eta2 - au * (self.eta2 / au).atan() };
        (d1, u / (u * u + self.eta2 * self.eta2))
    }

    /// `(D₁(t), D₂(t))` for a single pole.
    fn dropped(&self, t: f64) -> (f64, f64) {
        let scale = self.eta1.max(self.eta2);
        let dist = if t < 0.0 { -t } else { (t - self.eta1).max(0.0) };
        let (mut s1, mut s2) = (0.0, 0.0);
        if dist > Self::NEAR * scale {
            let nodes = if dist > Self::FAR * scale { &self.far } else { &self.mid };
            for &(e, wf1, wf2) in nodes {
                let (a, b) = self.integrand(t, e);
                s1 += wf2 * a;
                s2 += wf1 * b;
            }
        } else {
            let f = CountingKernel { e: 0.0, eta1: self.eta1 };
            let breaks = aligned_breaks(0.0, self.eta1, 0.25 * self.eta1, &[t], self.eta2.min(self.eta1));
            for p in breaks.windows(2) {
                for (e, w) in self.gl.mapped(p[0], p[1]) {
                    let d = f.derivatives(e);
                    let (a, b) = self.integrand(t, e);
                    s1 += w * d[2] * a;
                    s2 += w * d[1] * b;
                }
            }
        }
        (-s1 / PI, self.eta2 * s2 / PI)
    }

    fn phi(&self, t: f64) -> f64 {
        let f0 = 1.0 - transition(t / self.eta1);
        let (d1, d2) = self.dropped(t);
        f0 - d1 - d2
    }

    fn counting(&self, lam: &[f64], e: f64) -> f64 {
        lam.iter().map(|&l| self.phi(l - e)).sum()
    }
}

/// `F_E = A_E + B_E` for the spectrum `s`, evaluated pole by pole.
pub fn counting_estimate(s: &Spectrum, e: f64, p: &HSParams) -> Result<f64> {
    p.validate()?;
    let n = s.n();
    let k = PoleKernel::new(p.eta1(n), p.eta2(n), p.quad.n_e);
    Ok(k.counting(&s.lambda, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedEigenvalue {
    pub i: usize,
    pub value: f64,
    /// `I = [γ_j, γ_k]`.
    pub window: (f64, f64),
    pub window_indices: (usize, usize),
    pub quad_error_estimate: f64,
    pub exact_gap_to_lambda: Option<f64>,
}

/// Regularized eigenvalues `λ̃_i = γ_j + ∫_I (1 − r_i(F_E)) dE` for each index,
/// with `r_i` the smooth step from 0 at `i − 1/2` to 1 at `i`.
pub fn tilde_lambdas(s: &Spectrum, indices: &[usize], p: &HSParams) -> Result<Vec<RegularizedEigenvalue>> {
    p.validate()?;
    let n = s.n();
    let gamma = classical_locations(n);
    let targets = indices
        .iter()
        .map(|&i| {
            let (j, k) = p.window_indices(n, i)?;
            Ok((i, (j, k), (gamma.get(j), gamma.get(k))))
        })
        .collect::<Result<Vec<_>>>()?;
    tilde_core(s, &targets, p)
}

/// `λ̃_i` over an explicit window `[lo, hi]`, e.g. a translated one.
pub fn tilde_lambda_with_window(s: &Spectrum, i: usize, window: (f64, f64), p: &HSParams) -> Result<RegularizedEigenvalue> {
    p.validate()?;
    if !(window.0 < window.1) || i == 0 || i > s.n() {
        return Err(invalid(format!("bad window {window:?} or index {i}")));
    }
    Ok(tilde_core(s, &[(i, (0, 0), window)], p)?.remove(0))
}

/// `λ̃_i` for a matrix sample; diagonalizes once.
pub fn tilde_lambda(m: &MatrixSample, i: usize, p: &HSParams) -> Result<RegularizedEigenvalue> {
    let s = eigenvalues(m, false)?;
    Ok(tilde_lambdas(&s, &[i], p)?.remove(0))
}

type Target = (usize, (usize, usize), (f64, f64));

fn tilde_core(s: &Spectrum, targets: &[Target], p: &HSParams) -> Result<Vec<RegularizedEigenvalue>> {
    let n = s.n();
    let lam = &s.lambda;
    if n < 4 {
        return Err(invalid("need at least four eigenvalues"));
    }
    let (eta1, eta2) = (p.eta1(n), p.eta2(n));
    let kernel = PoleKernel::new(eta1, eta2, p.quad.n_e);
    let half = GaussLegendre::new((p.quad.n_e / 2).max(2));

    let lo = targets.iter().map(|t| t.2 .0).fold(f64::INFINITY, f64::min);
    let hi = targets.iter().map(|t| t.2 .1).fold(f64::NEG_INFINITY, f64::max);
    const OFFSETS: [f64; 12] = [-3.0, -2.0, -1.5, -1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0, 2.0];
    let mut breaks: Vec<f64> = targets.iter().flat_map(|t| [t.2 .0, t.2 .1]).collect();
    let eta = eta1.max(eta2);
    for &l in lam.iter().filter(|&&l| l > lo - 4.0 * eta && l < hi + 4.0 * eta) {
        breaks.extend(OFFSETS.iter().map(|c| l + c * eta).filter(|&x| x > lo && x < hi));
    }
    sort_dedup(&mut breaks, 1e-15 * (hi - lo));
    let w_max = 1.0 / n as f64;
    let mut filled = vec![breaks[0]];
    for w in breaks.windows(2) {
        let k = ((w[1] - w[0]) / w_max).ceil().max(1.0) as usize;
        filled.extend((1..=k).map(|m| if m == k { w[1] } else { w[0] + (w[1] - w[0]) * m as f64 / k as f64 }));
    }

    struct Panel {
        lo: f64,
        hi: f64,
        fine: Vec<(f64, f64)>,
        coarse: Vec<(f64, f64)>,
    }
    let panels: Vec<Panel> = filled
        .windows(2)
        .map(|w| {
            let eval = |g: &GaussLegendre| -> Vec<(f64, f64)> {
                g.mapped(w[0], w[1]).map(|(e, wt)| (wt, kernel.counting(lam, e))).collect()
            };
            Panel { lo: w[0], hi: w[1], fine: eval(&kernel.gl), coarse: eval(&half) }
        })
        .collect();

    let mut out = Vec::with_capacity(targets.len());
    for &(i, jk, (a, b)) in targets {
        let r = |x: f64| transition(2.0 * (x - i as f64 + 0.5));
        let tol = 1e-12 * (b - a);
        let (mut vf, mut vc) = (0.0, 0.0);
        for pnl in panels.iter().filter(|q| q.lo >= a - tol && q.hi <= b + tol) {
            vf += pnl.fine.iter().map(|&(w, f)| w * (1.0 - r(f))).sum::<f64>();
            vc += pnl.coarse.iter().map(|&(w, f)| w * (1.0 - r(f))).sum::<f64>();
        }
        let value = a + vf;
        if !value.is_finite() {
            return Err(Error::Numerical(format!("non-finite λ̃ at index {i}")));
        }
        out.push(RegularizedEigenvalue {
            i,
            value,
            window: (a, b),
            window_indices: jk,
            quad_error_estimate: (vf - vc).abs(),
            exact_gap_to_lambda: Some((value - lam[i - 1]).abs()),
        });
    }
    Ok(out)
}

/// CSV with columns `i,lambda_i,tilde_lambda_i,abs_error,quad_error_estimate`.
pub fn regularized_csv(s: &Spectrum, rows: &[RegularizedEigenvalue]) -> String {
    let mut out = String::from("i,lambda_i,tilde_lambda_i,abs_error,quad_error_estimate\n");
    for r in rows {
        let l = s.lambda[r.i - 1];
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.i,
            fmt_f64(l),
            fmt_f64(r.value),
            fmt_f64((r.value - l).abs()),
            fmt_f64(r.quad_error_estimate)
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdEstimate {
    /// Richardson-extrapolated derivative.
    pub value: f64,
    /// `|D(h) − D(h/2)|`.
    pub gauge: f64,
    pub h: f64,
    /// Set when the gauge exceeds 10% of the estimate.
    pub noisy: bool,
}

/// Central finite difference of `fun` in the mirrored entry `(a, b)` (0-based),
/// taken at `θ^{ab}H` with step `h = 1e−4/√N` and Richardson over `{h, h/2}`.
/// Each evaluation sees the perturbed matrix, so `fun` re-diagonalizes as needed.
pub fn fd_entry_derivative(
    fun: &dyn Fn(&MatrixSample) -> Result<f64>,
    m: &MatrixSample,
    entry: (usize, usize),
    part: Part,
    order: u32,
    theta: f64,
) -> Result<FdEstimate> {
    let n = m.n();
    let (a, b) = entry;
    if a >= n || b >= n {
        return Err(invalid(format!("entry ({a}, {b}) outside a {n}×{n} matrix")));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(invalid(format!("theta must lie in [0, 1], got {theta}")));
    }
    if order != 1 && order != 2 {
        return Err(invalid(format!("order must be 1 or 2, got {order}")));
    }
    let base = if theta == 1.0 { m.h.clone() } else { m.h.theta_scaled(a, b, theta) };
    let eval = |d: f64| -> Result<f64> {
        let h = if d == 0.0 { base.clone() } else { base.perturbed(a, b, part, d)? };
        fun(&MatrixSample { h, seed: m.seed, spec_id: m.spec_id.clone() })
    };
    let h = 1e-4 / (n as f64).sqrt();
    let (dh, dh2) = if order == 1 {
        let d = |s: f64| -> Result<f64> { Ok((eval(s)? - eval(-s)?) / (2.0 * s)) };
        (d(h)?, d(0.5 * h)?)
    } else {
        let f0 = eval(0.0)?;
        let d = |s: f64| -> Result<f64> { Ok((eval(s)? - 2.0 * f0 + eval(-s)?) / (s * s)) };
        (d(h)?, d(0.5 * h)?)
    };
    let value = (4.0 * dh2 - dh) / 3.0;
    let gauge = (dh - dh2).abs();
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite finite-difference estimate".into()));
    }
    Ok(FdEstimate { value, gauge, h, noisy: gauge > 0.1 * value.abs() })
}
