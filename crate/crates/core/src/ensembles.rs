//! Generalized Wigner ensembles: variance profiles, entry laws and samplers.

use std::collections::BTreeMap;

use faer::{c64, Mat};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    RealSymmetric,
    ComplexHermitian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    FlatGue,
    FlatGoe,
    Banded,
    DoublyStochasticRandom,
}

/// Serializable description of a variance profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub kind: ProfileKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

/// Entry variances `σ_ij²`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProfile {
    pub n: usize,
    pub sigma2: Vec<f64>,
    pub c_lo: f64,
    pub c_hi: f64,
    /// GOE-style profile whose row sums are `(N+1)/N` rather than 1.
    pub reference: bool,
}

impl VarianceProfile {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.sigma2[i * self.n + j]
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.n;
        (0..n).map(|j| (0..n).map(|i| self.get(i, j)).sum()).collect()
    }

    pub fn max_column_sum_error(&self) -> f64 {
        self.column_sums()
            .iter()
            .fold(0.0, |m, s| f64::max(m, (s - 1.0).abs()))
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n;
        (0..n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    fn check(&self) -> Result<()> {
        let nf = self.n as f64;
        let (lo, hi) = (self.c_lo / nf, self.c_hi / nf);
        let tol = 1e-12 / nf;
        for &s in &self.sigma2 {
            if !(s >= lo - tol && s <= hi + tol) {
                return Err(invalid(format!(
                    "variance {s:e} outside [{lo:e}, {hi:e}] (c = {}, C = {})",
                    self.c_lo, self.c_hi
                )));
            }
        }
        if !self.reference {
            let err = self.max_column_sum_error();
            if err > 1e-12 {
                return Err(Error::Numerical(format!("column sums off by {err:e}")));
            }
        }
        Ok(())
    }
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: Option<f64>) -> Result<f64> {
    match (params.get(key), default) {
        (Some(&v), _) => Ok(v),
        (None, Some(d)) => Ok(d),
        (None, None) => Err(invalid(format!("missing profile parameter `{key}`"))),
    }
}

/// Builds a variance profile.
///
/// `banded` params: `width` (required), `contrast` (in-band/out-of-band ratio, default 4),
/// `c_lo`, `c_hi` (defaults 0.2, 5). `doubly_stochastic_random` params: `seed`,
/// `spread` (log-range of the random weights, default 1), `c_lo`, `c_hi`.
pub fn build_variance_profile(
    kind: ProfileKind,
    n: usize,
    params: &BTreeMap<String, f64>,
) -> Result<VarianceProfile> {
    if n < 2 {
        return Err(invalid(format!("matrix dimension must be at least 2, got {n}")));
    }
    let nf = n as f64;
    let profile = match kind {
        ProfileKind::FlatGue => VarianceProfile {
            n,
            sigma2: vec![1.0 / nf; n * n],
            c_lo: 1.0,
            c_hi: 1.0,
            reference: false,
        },
        ProfileKind::FlatGoe => {
            let mut sigma2 = vec![1.0 / nf; n * n];
            for i in 0..n {
                sigma2[i * n + i] = 2.0 / nf;
            }
            VarianceProfile { n, sigma2, c_lo: 1.0, c_hi: 2.0, reference: true }
        }
        ProfileKind::Banded => {
            let width = param(params, "width", None)?;
            let contrast = param(params, "contrast", Some(4.0))?;
            if !(width >= 1.0) || width.fract() != 0.0 {
                return Err(invalid("band width must be a positive integer"));
            }
            if !(contrast > 0.0) {
                return Err(invalid("band contrast must be positive"));
            }
            let w = width as usize;
            let weight = |i: usize, j: usize| {
                let d = i.abs_diff(j);
                if d.min(n - d) <= w {
                    contrast
                } else {
                    1.0
                }
            };
            let row: f64 = (0..n).map(|j| weight(0, j)).sum();
            let mut sigma2 = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    sigma2[i * n + j] = weight(i, j) / row;
                }
            }
            VarianceProfile {
                n,
                sigma2,
                c_lo: param(params, "c_lo", Some(0.2))?,
                c_hi: param(params, "c_hi", Some(5.0))?,
                reference: false,
            }
        }
        ProfileKind::DoublyStochasticRandom => {
            let seed = param(params, "seed", Some(0.0))?;
            let spread = param(params, "spread", Some(1.0))?;
            if !(spread > 0.0) {
                return Err(invalid("spread must be positive"));
            }
            VarianceProfile {
                n,
                sigma2: sinkhorn_symmetric(n, seed as u64, spread)?,
                c_lo: param(params, "c_lo", Some(0.2))?,
                c_hi: param(params, "c_hi", Some(5.0))?,
                reference: false,
            }
        }
    };
    profile.check()?;
    Ok(profile)
}

/// Random symmetric positive weights scaled to a doubly stochastic matrix by
/// symmetric Sinkhorn iteration `d ← √(d / (A d))`.
fn sinkhorn_symmetric(n: usize, seed: u64, spread: f64) -> Result<Vec<f64>> {
    let mut r = rng::stream(rng::derive_seed(seed, &[0x5157]));
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let u: f64 = r.random();
            let w = (spread * (u - 0.5)).exp();
            a[i * n + j] = w;
            a[j * n + i] = w;
        }
    }
    let mut d = vec![1.0 / (n as f64).sqrt(); n];
    for _ in 0..10_000 {
        let ad: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[i * n + j] * d[j]).sum::<f64>())
            .collect();
        let err = (0..n).fold(0.0f64, |m, i| m.max((d[i] * ad[i] - 1.0).abs()));
        if err < 1e-14 {
            let mut s = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = d[i] * a[i * n + j] * d[j];
                    s[i * n + j] = v;
                    s[j * n + i] = v;
                }
            }
            return Ok(s);
        }
        for i in 0..n {
            d[i] = (d[i] / ad[i]).sqrt();
        }
    }
    Err(Error::Numerical("Sinkhorn scaling did not converge".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    Gaussian,
    ThreePoint,
    TwoPointRademacher,
    Uniform,
}

impl LawKind {
    /// Raw moment `E Xᵖ` of the unit-variance law.
    pub fn moment(self, p: u32) -> f64 {
        if p == 0 {
            return 1.0;
        }
        if p % 2 == 1 {
            return 0.0;
        }
        let h = (p / 2) as i32;
        match self {
            LawKind::Gaussian => (1..p).step_by(2).map(|k| k as f64).product(),
            LawKind::ThreePoint => 3f64.powi(h - 1),
            LawKind::TwoPointRademacher => 1.0,
            LawKind::Uniform => 3f64.powi(h) / (p + 1) as f64,
        }
    }

    /// Absolute moment `E|X|ᵖ` of the unit-variance law.
    pub fn abs_moment(self, p: u32) -> f64 {
        if p == 0 {
            return 1.0;
        }
        let pf = p as f64;
        match self {
            LawKind::Gaussian => 2f64.powf(pf / 2.0) * half_gamma(p + 1) / std::f64::consts::PI.sqrt(),
            LawKind::ThreePoint => 3f64.powf(pf / 2.0) / 3.0,
            LawKind::TwoPointRademacher => 1.0,
            LawKind::Uniform => 3f64.powf(pf / 2.0) / (pf + 1.0),
        }
    }

    fn sample<R: Rng + ?Sized>(self, r: &mut R) -> f64 {
        match self {
            LawKind::Gaussian => StandardNormal.sample(r),
            LawKind::ThreePoint => {
                let u: f64 = r.random();
                if u < 1.0 / 6.0 {
                    -3f64.sqrt()
                } else if u < 1.0 / 3.0 {
                    3f64.sqrt()
                } else {
                    0.0
                }
            }
            LawKind::TwoPointRademacher => {
                if r.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            LawKind::Uniform => (2.0 * r.random::<f64>() - 1.0) * 3f64.sqrt(),
        }
    }
}

/// `Γ(m/2)` for a positive integer `m`.
fn half_gamma(m: u32) -> f64 {
    let mut g = if m.is_multiple_of(2) { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut x = if m.is_multiple_of(2) { 1.0 } else { 0.5 };
    while x < m as f64 / 2.0 - 1e-9 {
        g *= x;
        x += 1.0;
    }
    g
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

/// Distribution of a normalized entry. A complex law with `re_im_ratio = ρ` is
/// `√(1/(1+ρ))·X + i·√(ρ/(1+ρ))·Y` with `X, Y` independent copies of `kind`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryLaw {
    pub kind: LawKind,
    /// Standard deviation; ensembles require the unit law.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re_im_ratio: Option<f64>,
}

impl EntryLaw {
    pub fn real(kind: LawKind) -> Self {
        Self { kind, scale: 1.0, re_im_ratio: None }
    }

    pub fn complex(kind: LawKind, re_im_ratio: f64) -> Self {
        Self { kind, scale: 1.0, re_im_ratio: Some(re_im_ratio) }
    }

    pub fn is_complex(&self) -> bool {
        self.re_im_ratio.is_some()
    }

    fn parts(&self) -> (f64, f64) {
        match self.re_im_ratio {
            None => (self.scale, 0.0),
            Some(r) => (self.scale * (1.0 / (1.0 + r)).sqrt(), self.scale * (r / (1.0 + r)).sqrt()),
        }
    }

    /// `E[ξᵃ ξ̄ᵇ]`, expanded binomially over the independent real and imaginary parts.
    pub fn mixed_moment(&self, a: u32, b: u32) -> c64 {
        let (sr, si) = self.parts();
        if !self.is_complex() {
            return c64::new(sr.powi((a + b) as i32) * self.kind.moment(a + b), 0.0);
        }
        let i_pow = |k: u32| match k % 4 {
            0 => c64::new(1.0, 0.0),
            1 => c64::new(0.0, 1.0),
            2 => c64::new(-1.0, 0.0),
            _ => c64::new(0.0, -1.0),
        };
        let mut total = c64::new(0.0, 0.0);
        for j in 0..=a {
            for k in 0..=b {
                let px = j + k;
                let py = a + b - px;
                let mx = sr.powi(px as i32) * self.kind.moment(px);
                let my = si.powi(py as i32) * self.kind.moment(py);
                if mx == 0.0 || my == 0.0 {
                    continue;
                }
                // (iY)^{a−j} (−iY)^{b−k}
                let phase = i_pow(a - j) * i_pow(3 * (b - k));
                let c = binom(a, j) * binom(b, k);
                total += phase * (c * mx * my);
            }
        }
        total
    }

    /// Normalized absolute moment `E|ξ/scale|ᵖ`: exact for real laws and for even `p`
    /// of complex laws; `None` for odd `p` of complex laws.
    pub fn abs_moment(&self, p: u32) -> Option<f64> {
        match self.re_im_ratio {
            None => Some(self.kind.abs_moment(p)),
            Some(_) if p.is_multiple_of(2) => {
                let unit = EntryLaw { scale: 1.0, ..*self };
                Some(unit.mixed_moment(p / 2, p / 2).re)
            }
            Some(_) => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, r: &mut R) -> c64 {
        let (sr, si) = self.parts();
        let re = sr * self.kind.sample(r);
        let im = if self.is_complex() { si * self.kind.sample(r) } else { 0.0 };
        c64::new(re, im)
    }
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Law on `{−√3σ, 0, √3σ}` with probabilities `{1/6, 2/3, 1/6}`: it matches the
/// first four moments of a centered Gaussian of variance `σ²`.
pub fn three_point_law(sigma: f64) -> Result<EntryLaw> {
    if !(sigma > 0.0) {
        return Err(invalid("three-point law needs sigma > 0"));
    }
    Ok(EntryLaw { kind: LawKind::ThreePoint, scale: sigma, re_im_ratio: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub symmetry: Symmetry,
    pub profile: ProfileSpec,
    pub offdiag_law: EntryLaw,
    pub diag_law: EntryLaw,
}

impl EnsembleSpec {
    pub fn gue(n: usize) -> Self {
        Self {
            symmetry: Symmetry::ComplexHermitian,
            profile: ProfileSpec { kind: ProfileKind::FlatGue, n, params: BTreeMap::new() },
            offdiag_law: EntryLaw::complex(LawKind::Gaussian, 1.0),
            diag_law: EntryLaw::real(LawKind::Gaussian),
        }
    }

    pub fn goe(n: usize) -> Self {
        Self {
            symmetry: Symmetry::RealSymmetric,
            profile: ProfileSpec { kind: ProfileKind::FlatGoe, n, params: BTreeMap::new() },
            offdiag_law: EntryLaw::real(LawKind::Gaussian),
            diag_law: EntryLaw::real(LawKind::Gaussian),
        }
    }

    /// Hermitian flat profile with three-point real and imaginary parts.
    pub fn three_point_hermitian(n: usize) -> Self {
        Self {
            offdiag_law: EntryLaw::complex(LawKind::ThreePoint, 1.0),
            diag_law: EntryLaw::real(LawKind::ThreePoint),
            ..Self::gue(n)
        }
    }

    pub fn n(&self) -> usize {
        self.profile.n
    }

    pub fn with_n(&self, n: usize) -> Self {
        let mut s = self.clone();
        s.profile.n = n;
        s
    }

    /// Short stable identifier: FNV-1a of the canonical JSON form.
    pub fn id(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }

    fn validate_laws(&self) -> Result<()> {
        for (name, law) in [("offdiag_law", &self.offdiag_law), ("diag_law", &self.diag_law)] {
            if law.scale != 1.0 {
                return Err(invalid(format!("{name} must have unit variance inside an ensemble")));
            }
            if let Some(r) = law.re_im_ratio {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(invalid(format!("{name}: re_im_ratio must be positive")));
                }
            }
        }
        if self.diag_law.is_complex() {
            return Err(invalid("diagonal entries are real; diag_law cannot carry re_im_ratio"));
        }
        match self.symmetry {
            Symmetry::RealSymmetric if self.offdiag_law.is_complex() => {
                Err(invalid("real symmetric ensemble with a complex off-diagonal law"))
            }
            Symmetry::ComplexHermitian if !self.offdiag_law.is_complex() => {
                Err(invalid("complex Hermitian ensemble needs offdiag_law.re_im_ratio"))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Ensemble> {
        self.validate_laws()?;
        let profile = build_variance_profile(self.profile.kind, self.profile.n, &self.profile.params)?;
        Ok(Ensemble { spec: self.clone(), profile, id: self.id() })
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// A validated spec together with its realized variance profile.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub spec: EnsembleSpec,
    pub profile: VarianceProfile,
    pub id: String,
}

impl Ensemble {
    pub fn n(&self) -> usize {
        self.profile.n
    }

    pub fn law(&self, i: usize, j: usize) -> &EntryLaw {
        if i == j {
            &self.spec.diag_law
        } else {
            &self.spec.offdiag_law
        }
    }

    pub fn sample(&self, seed: u64) -> MatrixSample {
        sample_matrix(self, seed)
    }
}

/// Self-adjoint matrix, real symmetric or complex Hermitian.
#[derive(Debug, Clone, PartialEq)]
pub enum Matrix {
    Real(Mat<f64>),
    Complex(Mat<c64>),
}

/// Which real component of an entry a perturbation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Re,
    Im,
}

impl Matrix {
    pub fn n(&self) -> usize {
        match self {
            Matrix::Real(m) => m.nrows(),
            Matrix::Complex(m) => m.nrows(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> c64 {
        match self {
            Matrix::Real(m) => c64::new(m[(i, j)], 0.0),
            Matrix::Complex(m) => m[(i, j)],
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Matrix::Complex(_))
    }

    pub fn from_real_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Matrix::Real(m)
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Matrix::from_real_fn(d.len(), |i, j| if i == j { d[i] } else { 0.0 })
    }

    pub fn trace(&self) -> f64 {
        (0..self.n()).map(|i| self.get(i, i).re).sum()
    }

    pub fn frobenius(&self) -> f64 {
        let n = self.n();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.get(i, j).norm_sqr();
            }
        }
        s.sqrt()
    }

    /// `max |h_ij − conj(h_ji)|`.
    pub fn self_adjoint_defect(&self) -> f64 {
        let n = self.n();
        let mut d = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                d = d.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        d
    }

    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n() {
            match &mut out {
                Matrix::Real(m) => m[(i, i)] += c,
                Matrix::Complex(m) => m[(i, i)] += c,
            }
        }
        out
    }

    /// Adds `delta` to the chosen part of `h_ab`, mirrored so the result stays self-adjoint.
    /// On the diagonal only the real part exists.
    pub fn perturbed(&self, a: usize, b: usize, part: Part, delta: f64) -> Result<Self> {
        let mut out = self.clone();
        match (&mut out, part) {
            (Matrix::Real(m), Part::Re) => {
                m[(a, b)] += delta;
                if a != b {
                    m[(b, a)] += delta;
                }
            }
            (Matrix::Real(_), Part::Im) => return Err(invalid("real matrix has no imaginary part")),
            (Matrix::Complex(m), part) => {
                if a == b {
                    if part == Part::Im {
                        return Err(invalid("diagonal entries are real"));
                    }
                    m[(a, a)] += delta;
                } else {
                    let d = match part {
                        Part::Re => c64::new(delta, 0.0),
                        Part::Im => c64::new(0.0, delta),
                    };
                    m[(a, b)] += d;
                    m[(b, a)] += d.conj();
                }
            }
        }
        Ok(out)
    }

    /// `θ^{ab}H`: the matrix with entries `(a,b)` and `(b,a)` multiplied by `θ`.
    pub fn theta_scaled(&self, a: usize, b: usize, theta: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            Matrix::Real(m) => {
                m[(a, b)] *= theta;
                if a != b {
                    m[(b, a)] *= theta;
                }
            }
            Matrix::Complex(m) => {
                m[(a, b)] *= theta;
                if a != b {
                    m[(b, a)] *= theta;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSample {
    pub h: Matrix,
    pub seed: u64,
    pub spec_id: String,
}

impl MatrixSample {
    pub fn new(h: Matrix, seed: u64) -> Self {
        Self { h, seed, spec_id: String::from("literal") }
    }

    pub fn n(&self) -> usize {
        self.h.n()
    }
}

/// Samples the upper triangle row by row from the stream seeded with `seed` and
/// mirrors it, so the result is exactly self-adjoint and a function of `(spec, seed)`.
pub fn sample_matrix(ens: &Ensemble, seed: u64) -> MatrixSample {
    let mut r = rng::stream(seed);
    sample_matrix_with(ens, &mut r, seed)
}

pub fn sample_matrix_with<R: Rng + ?Sized>(ens: &Ensemble, r: &mut R, seed: u64) -> MatrixSample {
    let n = ens.n();
    let h = match ens.spec.symmetry {
        Symmetry::RealSymmetric => {
            let mut m = Mat::<f64>::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = ens.profile.get(i, j).sqrt() * ens.law(i, j).sample(r).re;
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            Matrix::Real(m)
        }
        Symmetry::ComplexHermitian => {
            let mut m = Mat::<c64>::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = ens.law(i, j).sample(r) * ens.profile.get(i, j).sqrt();
                    m[(i, j)] = v;
                    m[(j, i)] = v.conj();
                }
            }
            Matrix::Complex(m)
        }
    };
    MatrixSample { h, seed, spec_id: ens.id.clone() }
}

/// `E[h_ijᵃ h̄_ijᵇ] = σ_ij^{a+b} E[ξᵃ ξ̄ᵇ]` for `a + b ≤ 4`.
pub fn entry_moment(ens: &Ensemble, i: usize, j: usize, a: u32, b: u32) -> Result<c64> {
    if a + b > 4 {
        return Err(invalid(format!("entry moments are defined for a + b ≤ 4, got {}", a + b)));
    }
    let n = ens.n();
    if i >= n || j >= n {
        return Err(invalid(format!("entry ({i},{j}) outside {n}×{n}")));
    }
    let s = ens.profile.get(i, j).sqrt();
    Ok(ens.law(i, j).mixed_moment(a, b) * s.powi((a + b) as i32))
}

/// `max |E vᵃv̄ᵇ − E wᵃw̄ᵇ|` over all entries and `a + b ≤ 4`.
pub fn moment_mismatch(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    if a.n() != b.n() {
        return Err(invalid("ensembles have different dimensions"));
    }
    let n = a.n();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            for p in 0..=4u32 {
                for q in 0..=(4 - p) {
                    let d = entry_moment(a, i, j, p, q)? - entry_moment(b, i, j, p, q)?;
                    worst = worst.max(d.norm());
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_point_moments(sigma: f64) -> [f64; 5] {
        let atoms = [(-(3f64.sqrt()) * sigma, 1.0 / 6.0), (0.0, 2.0 / 3.0), (3f64.sqrt() * sigma, 1.0 / 6.0)];
        let mut m = [0.0; 5];
        for (p, mp) in m.iter_mut().enumerate() {
            *mp = atoms.iter().map(|(x, w)| w * x.powi(p as i32)).sum();
        }
        m
    }

    #[test]
    fn flat_profiles() {
        let p = build_variance_profile(ProfileKind::FlatGue, 4, &BTreeMap::new()).unwrap();
        assert!(p.sigma2.iter().all(|&s| s == 0.25));
        assert!(p.column_sums().iter().all(|&s| s == 1.0));
        let p = build_variance_profile(ProfileKind::FlatGoe, 4, &BTreeMap::new()).unwrap();
        assert!(p.reference);
        assert_eq!(p.get(1, 1), 0.5);
        assert_eq!(p.get(0, 3), 0.25);
        assert!(p.column_sums().iter().all(|&s| s == 1.25));
        assert!(build_variance_profile(ProfileKind::FlatGue, 1, &BTreeMap::new()).is_err());
    }

    #[test]
    fn banded_profile_invariants() {
        let params = BTreeMap::from([("width".to_string(), 20.0)]);
        let p = build_variance_profile(ProfileKind::Banded, 100, &params).unwrap();
        assert!(p.max_column_sum_error() <= 1e-12);
        assert!(p.is_symmetric());
        assert!(p.sigma2.iter().all(|&s| (0.2 / 100.0..=5.0 / 100.0).contains(&s)));
        let bad = BTreeMap::from([("width".to_string(), 5.0), ("contrast".to_string(), 100.0)]);
        assert!(build_variance_profile(ProfileKind::Banded, 100, &bad).is_err());
        assert!(build_variance_profile(ProfileKind::Banded, 100, &BTreeMap::new()).is_err());
    }

    #[test]
    fn random_doubly_stochastic_profile() {
        let params = BTreeMap::from([("seed".to_string(), 3.0), ("spread".to_string(), 2.0)]);
        let p = build_variance_profile(ProfileKind::DoublyStochasticRandom, 60, &params).unwrap();
        assert!(p.max_column_sum_error() <= 1e-12);
        assert!(p.is_symmetric());
    }

    #[test]
    fn three_point_moments_match_atom_sums() {
        for sigma in [1.0, 2.0, 0.3] {
            let law = three_point_law(sigma).unwrap();
            let m = three_point_moments(sigma);
            for p in 0..=4u32 {
                assert!((law.mixed_moment(p, 0).re - m[p as usize]).abs() < 1e-12);
            }
        }
        let law = three_point_law(2.0).unwrap();
        assert!((law.mixed_moment(2, 0).re - 4.0).abs() < 1e-12);
        assert!((law.mixed_moment(4, 0).re - 48.0).abs() < 1e-12);
        assert!(three_point_law(0.0).is_err());
        let g = EntryLaw::real(LawKind::Gaussian);
        let got: Vec<f64> = (1..=4).map(|p| g.mixed_moment(p, 0).re).collect();
        assert_eq!(got, vec![0.0, 1.0, 0.0, 3.0]);
    }

    #[test]
    fn absolute_moments() {
        let g = LawKind::Gaussian;
        assert!((g.abs_moment(1) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!((g.abs_moment(8) - 105.0).abs() < 1e-10);
        assert!((LawKind::Uniform.abs_moment(4) - 9.0 / 5.0).abs() < 1e-14);
    }

    #[test]
    fn complex_moments_by_enumeration() {
        // Brute-force E[ξ^a ξ̄^b] over the 9 atom pairs of a complex three-point law.
        let law = EntryLaw::complex(LawKind::ThreePoint, 0.5);
        let (sr, si) = ((1.0f64 / 1.5).sqrt(), (0.5f64 / 1.5).sqrt());
        let atoms = [(-(3f64.sqrt()), 1.0 / 6.0), (0.0, 2.0 / 3.0), (3f64.sqrt(), 1.0 / 6.0)];
        for a in 0..=4u32 {
            for b in 0..=(4 - a) {
                let mut want = c64::new(0.0, 0.0);
                for (x, px) in atoms {
                    for (y, py) in atoms {
                        let z = c64::new(sr * x, si * y);
                        want += z.powu(a) * z.conj().powu(b) * (px * py);
                    }
                }
                let got = law.mixed_moment(a, b);
                assert!((got - want).norm() < 1e-12, "a={a} b={b} got={got} want={want}");
            }
        }
    }

    #[test]
    fn gue_and_three_point_match_exactly() {
        let a = EnsembleSpec::gue(30).build().unwrap();
        let b = EnsembleSpec::three_point_hermitian(30).build().unwrap();
        assert_eq!(moment_mismatch(&a, &b).unwrap(), 0.0);
        assert!((entry_moment(&a, 0, 1, 1, 1).unwrap().re - 1.0 / 30.0).abs() < 1e-15);
        assert_eq!(entry_moment(&a, 0, 1, 1, 0).unwrap().norm(), 0.0);
        assert!(entry_moment(&a, 0, 1, 3, 2).is_err());
        let mut c = EnsembleSpec::three_point_hermitian(30);
        c.offdiag_law.kind = LawKind::TwoPointRademacher;
        let c = c.build().unwrap();
        assert!(moment_mismatch(&a, &c).unwrap() > 1e-4);
    }

    #[test]
    fn sampling_is_deterministic_and_self_adjoint() {
        let ens = EnsembleSpec::gue(40).build().unwrap();
        let a = sample_matrix(&ens, 11);
        let b = sample_matrix(&ens, 11);
        assert_eq!(a, b);
        assert_eq!(a.h.self_adjoint_defect(), 0.0);
        assert!((0..40).all(|i| a.h.get(i, i).im == 0.0));
        let c = sample_matrix(&ens, 12);
        assert_ne!(a.h, c.h);
    }

    #[test]
    fn gue_entry_statistics() {
        let n = 500;
        let ens = EnsembleSpec::gue(n).build().unwrap();
        let m = sample_matrix(&ens, 5).h;
        let mut off = crate::stats::Welford::default();
        let mut all = crate::stats::Welford::default();
        for i in 0..n {
            for j in 0..n {
                let v = m.get(i, j);
                if i < j {
                    off.push(v.re);
                    off.push(v.im);
                }
                all.push(v.norm_sqr());
            }
        }
        assert!(off.mean.abs() < 4.0 * off.stderr());
        assert!((all.mean - 1.0 / n as f64).abs() < 4.0 * all.stderr());
    }

    #[test]
    fn complex_parts_have_equal_variance() {
        let n = 1000;
        let ens = EnsembleSpec::gue(n).build().unwrap();
        let m = sample_matrix(&ens, 9).h;
        let (mut re, mut im) = (crate::stats::Welford::default(), crate::stats::Welford::default());
        for i in 0..n {
            for j in i + 1..n {
                let v = m.get(i, j);
                re.push(v.re * v.re);
                im.push(v.im * v.im);
            }
        }
        let se = (re.stderr().powi(2) + im.stderr().powi(2)).sqrt();
        assert!((re.mean - im.mean).abs() < 4.0 * se);
    }

    #[test]
    fn spec_json_roundtrip() {
        let json = r#"{"symmetry":"complex_hermitian","profile":{"kind":"banded","n":50,"params":{"width":5}},
            "offdiag_law":{"kind":"three_point","re_im_ratio":1.0},"diag_law":{"kind":"gaussian"}}"#;
        let spec: EnsembleSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.profile.kind, ProfileKind::Banded);
        let back: EnsembleSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, back);
        assert!(spec.build().is_ok());
        let mut bad = spec.clone();
        bad.diag_law.re_im_ratio = Some(1.0);
        assert!(bad.build().is_err());
    }

    #[test]
    fn perturbation_keeps_self_adjointness() {
        let ens = EnsembleSpec::gue(6).build().unwrap();
        let m = sample_matrix(&ens, 1).h;
        let p = m.perturbed(1, 4, Part::Im, 0.3).unwrap();
        assert_eq!(p.self_adjoint_defect(), 0.0);
        assert!((p.get(1, 4).im - m.get(1, 4).im - 0.3).abs() < 1e-15);
        assert!(m.perturbed(2, 2, Part::Im, 0.1).is_err());
        let t = m.theta_scaled(1, 4, 0.0);
        assert_eq!(t.get(4, 1).norm(), 0.0);
    }
}
