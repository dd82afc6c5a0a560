//! Matrix Ornstein–Uhlenbeck flow and coupled Dyson Brownian motions.

use faer::{c64, Mat};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensembles::{Ensemble, Matrix, MatrixSample};
use crate::error::{invalid, Error, Result};
use crate::format::fmt_f64;
use crate::rng;
use crate::spectral::bulk_range;

/// State of the entrywise OU flow `dx = dB/√N − x/(2Ns) dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub h: Matrix,
    pub t: f64,
    /// Stationary variances `s_ij`, row-major.
    pub s: Vec<f64>,
    /// `Var Im / Var Re` of off-diagonal entries in the Hermitian case.
    pub re_im_ratio: Option<f64>,
    pub noise_seed: u64,
    /// Number of completed evolve calls; keys the noise stream of the next one.
    pub epoch: u64,
}

impl FlowState {
    /// Starts the flow at `m` with the stationary variances of `ens`.
    pub fn new(m: &MatrixSample, ens: &Ensemble, noise_seed: u64) -> Result<Self> {
        if m.n() != ens.n() {
            return Err(invalid(format!("matrix is {}×{0}, ensemble has N = {}", m.n(), ens.n())));
        }
        if m.h.is_complex() != ens.spec.offdiag_law.is_complex() {
            return Err(invalid("matrix symmetry class differs from the ensemble"));
        }
        Ok(Self {
            h: m.h.clone(),
            t: 0.0,
            s: ens.profile.sigma2.clone(),
            re_im_ratio: ens.spec.offdiag_law.re_im_ratio,
            noise_seed,
            epoch: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.h.n()
    }

    /// `(s^ℝ_ij, s^ℂ_ij)`; the imaginary variance is zero on the diagonal and for real matrices.
    pub fn split_variance(&self, i: usize, j: usize) -> (f64, f64) {
        let s = self.s[i * self.n() + j];
        match self.re_im_ratio {
            Some(r) if i != j => (s / (1.0 + r), s * r / (1.0 + r)),
            _ => (s, 0.0),
        }
    }

    pub fn sample(&self) -> MatrixSample {
        MatrixSample { h: self.h.clone(), seed: self.noise_seed, spec_id: format!("ou@{}", fmt_f64(self.t)) }
    }
}

/// Exact OU transition for one real component with stationary variance `s`.
fn ou_step<R: Rng + ?Sized>(x: f64, s: f64, dt: f64, n: f64, r: &mut R) -> f64 {
    if s == 0.0 {
        return x;
    }
    let decay = (-dt / (2.0 * n * s)).exp();
    let var = s * (1.0 - decay * decay);
    let z: f64 = r.sample(StandardNormal);
    decay * x + var.sqrt() * z
}

/// Advances every entry by the exact OU transition over `t_target − t`.
pub fn ou_evolve(state: &FlowState, t_target: f64) -> Result<FlowState> {
    let dt = t_target - state.t;
    if !(dt >= 0.0) {
        return Err(invalid(format!("target time {t_target} precedes current time {}", state.t)));
    }
    let mut out = state.clone();
    if dt == 0.0 {
        return Ok(out);
    }
    let n = state.n();
    let nf = n as f64;
    let mut r = rng::stream(rng::derive_seed(state.noise_seed, &[state.epoch]));
    match &mut out.h {
        Matrix::Real(m) => {
            for i in 0..n {
                for j in i..n {
                    let (sr, _) = state.split_variance(i, j);
                    let v = ou_step(m[(i, j)], sr, dt, nf, &mut r);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
        }
        Matrix::Complex(m) => {
            for i in 0..n {
                for j in i..n {
                    let (sr, si) = state.split_variance(i, j);
                    let re = ou_step(m[(i, j)].re, sr, dt, nf, &mut r);
                    let im = if i == j { 0.0 } else { ou_step(m[(i, j)].im, si, dt, nf, &mut r) };
                    m[(i, j)] = c64::new(re, im);
                    m[(j, i)] = c64::new(re, -im);
                }
            }
        }
    }
    out.t = t_target;
    out.epoch += 1;
    Ok(out)
}

/// Two particle systems driven by the same Brownian motions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledParticles {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// 1 for real symmetric, 2 for complex Hermitian.
    pub beta_dyn: u32,
    pub t: f64,
    pub shared_noise_seed: u64,
    #[serde(default)]
    pub epoch: u64,
    /// Disables the Brownian term; for deterministic checks only.
    #[serde(default = "yes")]
    pub noise: bool,
}

fn yes() -> bool {
    true
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl CoupledParticles {
    pub fn new(x: Vec<f64>, y: Vec<f64>, beta_dyn: u32, shared_noise_seed: u64) -> Result<Self> {
        let p = Self { x, y, beta_dyn, t: 0.0, shared_noise_seed, epoch: 0, noise: true };
        p.validate()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() || self.x.len() < 2 {
            return Err(invalid("x and y need the same length N ≥ 2"));
        }
        if self.beta_dyn != 1 && self.beta_dyn != 2 {
            return Err(invalid(format!("beta_dyn must be 1 or 2, got {}", self.beta_dyn)));
        }
        if !strictly_increasing(&self.x) || !strictly_increasing(&self.y) {
            return Err(invalid("particle configurations must be strictly increasing"));
        }
        Ok(())
    }
}

/// Default Euler–Maruyama step count `⌈4tN²⌉`.
pub fn default_n_steps(t: f64, n: usize) -> usize {
    ((4.0 * t * (n * n) as f64).ceil() as usize).max(1)
}

/// Deepest bridge refinement of a single base step.
const MAX_HALVINGS: u32 = 200;
/// Proposals allowed per base step, on average, before the run is abandoned.
const BUDGET_PER_STEP: u64 = 64;

/// `Σ_j 1/(xi − x_j)` with four independent partial sums.
fn inverse_sum(xi: f64, xs: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = xs.chunks_exact(4);
    let rest: f64 = chunks.remainder().iter().map(|&xj| 1.0 / (xi - xj)).sum();
    for c in chunks {
        for k in 0..4 {
            acc[k] += 1.0 / (xi - c[k]);
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + rest
}

/// `(1/N) Σ_{j≠i} 1/(x_i − x_j)` for all `i`.
fn repulsion(x: &[f64], out: &mut [f64]) {
    let nf = x.len() as f64;
    for (i, o) in out.iter_mut().enumerate() {
        *o = (inverse_sum(x[i], &x[..i]) + inverse_sum(x[i], &x[i + 1..])) / nf;
    }
}

struct Stepper {
    sigma: f64,
    budget: u64,
    dx: Vec<f64>,
    dy: Vec<f64>,
    nx: Vec<f64>,
    ny: Vec<f64>,
}

impl Stepper {
    /// Proposes one Euler–Maruyama step; accepted when every gap of both
    /// systems keeps at least half its length (so in particular the order holds).
    fn propose(&mut self, x: &[f64], y: &[f64], h: f64, db: &[f64]) -> bool {
        repulsion(x, &mut self.dx);
        repulsion(y, &mut self.dy);
        for i in 0..x.len() {
            let noise = self.sigma * db[i];
            self.nx[i] = x[i] + self.dx[i] * h + noise;
            self.ny[i] = y[i] + self.dy[i] * h + noise;
        }
        gaps_kept(x, &self.nx) && gaps_kept(y, &self.ny)
    }

    /// Advances by `h` with Brownian increment `db`, splitting the increment
    /// by a Brownian bridge whenever the proposal is rejected.
    #[allow(clippy::too_many_arguments)]
    fn advance<R: Rng + ?Sized>(
        &mut self,
        x: &mut Vec<f64>,
        y: &mut Vec<f64>,
        t: f64,
        h: f64,
        db: &[f64],
        depth: u32,
        r: &mut R,
    ) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Numerical(format!("step budget exhausted near t = {t}")));
        }
        self.budget -= 1;
        if self.propose(x, y, h, db) {
            x.copy_from_slice(&self.nx);
            y.copy_from_slice(&self.ny);
            return Ok(());
        }
        if depth == MAX_HALVINGS {
            let bad = (1..x.len())
                .find(|&i| !(self.nx[i - 1] < self.nx[i]) || !(self.ny[i - 1] < self.ny[i]))
                .unwrap_or(0);
            return Err(Error::OrderingLost { halvings: depth, t, index: bad });
        }
        let spread = (0.25 * h).sqrt();
        let first: Vec<f64> = db
            .iter()
            .map(|&b| {
                let z: f64 = r.sample(StandardNormal);
                0.5 * b + spread * z
            })
            .collect();
        let second: Vec<f64> = db.iter().zip(&first).map(|(b, f)| b - f).collect();
        self.advance(x, y, t, 0.5 * h, &first, depth + 1, r)?;
        self.advance(x, y, t + 0.5 * h, 0.5 * h, &second, depth + 1, r)
    }
}

/// Whether every gap of `new` is positive and at least half the matching gap of `old`.
fn gaps_kept(old: &[f64], new: &[f64]) -> bool {
    old.windows(2)
        .zip(new.windows(2))
        .all(|(o, n)| 2.0 * (n[1] - n[0]) >= o[1] - o[0] && n[1] > n[0])
}

/// Euler–Maruyama for `dx_i = √(2/(Nβ)) dB_i + (1/N) Σ_{j≠i} dt/(x_i − x_j)`,
/// applied to `x` and `y` with the same increments.
pub fn dbm_coupled_evolve(p: &CoupledParticles, t_target: f64, n_steps: usize) -> Result<CoupledParticles> {
    p.validate()?;
    let dt = t_target - p.t;
    if !(dt >= 0.0) {
        return Err(invalid(format!("target time {t_target} precedes current time {}", p.t)));
    }
    if n_steps == 0 {
        return Err(invalid("n_steps must be positive"));
    }
    let mut out = p.clone();
    if dt == 0.0 {
        return Ok(out);
    }
    let n = p.n();
    let h = dt / n_steps as f64;
    let mut r = rng::stream(rng::derive_seed(p.shared_noise_seed, &[p.epoch]));
    let sigma = if p.noise { (2.0 / (n as f64 * p.beta_dyn as f64)).sqrt() } else { 0.0 };
    let mut st = Stepper { sigma, budget: BUDGET_PER_STEP * n_steps as u64 + 10_000, dx: vec![0.0; n], dy: vec![0.0; n], nx: vec![0.0; n], ny: vec![0.0; n] };
    let sh = h.sqrt();
    let mut db = vec![0.0; n];
    for k in 0..n_steps {
        for b in db.iter_mut() {
            let z: f64 = r.sample(StandardNormal);
            *b = sh * z;
        }
        st.advance(&mut out.x, &mut out.y, p.t + k as f64 * h, h, &db, 0, &mut r)?;
    }
    if !strictly_increasing(&out.x) || !strictly_increasing(&out.y) {
        return Err(Error::Numerical("particle order check failed after integration".into()));
    }
    out.t = t_target;
    out.epoch += 1;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCouplingReport {
    /// Max over bulk `i` of `N·|(x_{i+1} − x_i) − (y_{i+1} − y_i)|`.
    pub max_scaled_gap_diff: f64,
    /// 1-based index of the maximizing gap.
    pub worst_index: usize,
    /// `N·|Δgap_i|` for `i = 1..N−1`.
    pub profile: Vec<f64>,
}

pub fn gap_coupling_report(p: &CoupledParticles, alpha: f64) -> Result<GapCouplingReport> {
    p.validate()?;
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(format!("alpha must lie in (0, 1/2), got {alpha}")));
    }
    let n = p.n();
    let nf = n as f64;
    let profile: Vec<f64> = (0..n - 1)
        .map(|i| nf * ((p.x[i + 1] - p.x[i]) - (p.y[i + 1] - p.y[i])).abs())
        .collect();
    let (lo, hi) = bulk_range(n, alpha);
    let (mut best, mut worst) = (0.0, lo);
    for i in lo..=hi.min(n - 1) {
        if profile[i - 1] > best {
            best = profile[i - 1];
            worst = i;
        }
    }
    Ok(GapCouplingReport { max_scaled_gap_diff: best, worst_index: worst, profile })
}

/// Evolves through each checkpoint time in turn, returning the snapshots
/// (the initial state first). Each leg uses [`default_n_steps`].
pub fn dbm_trajectory(p: &CoupledParticles, checkpoints: &[f64]) -> Result<Vec<CoupledParticles>> {
    let mut out = vec![p.clone()];
    let mut cur = p.clone();
    for &t in checkpoints {
        cur = dbm_coupled_evolve(&cur, t, default_n_steps(t - cur.t, cur.n()))?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// CSV with columns `t,i,x_i,y_i` (1-based `i`).
pub fn trajectory_csv(snapshots: &[CoupledParticles]) -> String {
    let mut out = String::from("t,i,x_i,y_i\n");
    for s in snapshots {
        let t = fmt_f64(s.t);
        for (i, (x, y)) in s.x.iter().zip(&s.y).enumerate() {
            out.push_str(&format!("{t},{},{},{}\n", i + 1, fmt_f64(*x), fmt_f64(*y)));
        }
    }
    out
}

/// A real symmetric matrix with every stationary variance equal to `s`; handy for tests.
pub fn flat_flow(n: usize, h0: f64, s: f64, noise_seed: u64) -> FlowState {
    FlowState {
        h: Matrix::Real(Mat::from_fn(n, n, |_, _| h0)),
        t: 0.0,
        s: vec![s; n * n],
        re_im_ratio: None,
        noise_seed,
        epoch: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{sample_matrix, EnsembleSpec};
    use crate::spectral::eigenvalues;
    use crate::stats::Welford;

    #[test]
    fn zero_time_is_identity() {
        let ens = EnsembleSpec::gue(6).build().unwrap();
        let st = FlowState::new(&sample_matrix(&ens, 1), &ens, 9).unwrap();
        assert_eq!(ou_evolve(&st, 0.0).unwrap(), st);
        assert!(ou_evolve(&st, -1.0).is_err());
    }

    #[test]
    fn ou_transition_moments() {
        let (n, s, x0, dt) = (3usize, 0.5, 1.2, 0.9);
        let decay = (-dt / (2.0 * n as f64 * s)).exp();
        let (mut m, mut m2) = (Welford::default(), Welford::default());
        for k in 0..10_000u64 {
            let st = ou_evolve(&flat_flow(n, x0, s, k), dt).unwrap();
            let v = st.h.get(0, 1).re;
            m.push(v);
            m2.push((v - decay * x0).powi(2));
        }
        let var = s * (1.0 - decay * decay);
        assert!((m.mean - decay * x0).abs() < 4.0 * m.stderr(), "{m:?}");
        assert!((m2.mean - var).abs() < 4.0 * m2.stderr(), "{m2:?} vs {var}");
    }

    #[test]
    fn ou_semigroup_in_distribution() {
        let (n, s, x0) = (3usize, 0.4, -0.8);
        let (mut a, mut b) = (Welford::default(), Welford::default());
        let (mut a2, mut b2) = (Welford::default(), Welford::default());
        for k in 0..10_000u64 {
            let one = ou_evolve(&flat_flow(n, x0, s, k), 1.5).unwrap().h.get(1, 2).re;
            let st = ou_evolve(&flat_flow(n, x0, s, k + 1_000_000), 0.7).unwrap();
            let two = ou_evolve(&st, 1.5).unwrap().h.get(1, 2).re;
            a.push(one);
            b.push(two);
            a2.push(one * one);
            b2.push(two * two);
        }
        let se = (a.stderr().powi(2) + b.stderr().powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() < 4.0 * se);
        let se2 = (a2.stderr().powi(2) + b2.stderr().powi(2)).sqrt();
        assert!((a2.mean - b2.mean).abs() < 4.0 * se2);
    }

    #[test]
    fn long_time_reaches_equilibrium_and_stays_hermitian() {
        let ens = EnsembleSpec::gue(4).build().unwrap();
        let mut st = FlowState::new(&sample_matrix(&ens, 3), &ens, 4).unwrap();
        st.h = Matrix::Complex(Mat::from_fn(4, 4, |i, j| if i == j { c64::new(5.0, 0.0) } else { c64::new(3.0, 0.0) }));
        let mut w = Welford::default();
        for k in 0..4000u64 {
            st.noise_seed = k;
            let out = ou_evolve(&st, 1e4).unwrap();
            assert_eq!(out.h.self_adjoint_defect(), 0.0);
            w.push(out.h.get(0, 1).norm_sqr());
        }
        assert!((w.mean - 0.25).abs() < 4.0 * w.stderr(), "{w:?}");
    }

    fn goe_spectrum(n: usize, seed: u64) -> Vec<f64> {
        eigenvalues(&sample_matrix(&EnsembleSpec::goe(n).build().unwrap(), seed), false).unwrap().lambda
    }

    #[test]
    fn identical_start_stays_identical() {
        let x = goe_spectrum(40, 1);
        let p = CoupledParticles::new(x.clone(), x, 1, 7).unwrap();
        let out = dbm_coupled_evolve(&p, 0.01, default_n_steps(0.01, 40)).unwrap();
        assert_eq!(out.x, out.y);
        assert_ne!(out.x, p.x);
        let r = gap_coupling_report(&out, 0.1).unwrap();
        assert_eq!(r.max_scaled_gap_diff, 0.0);
    }

    #[test]
    fn two_particle_repulsion_without_noise() {
        let mut p = CoupledParticles::new(vec![-1.0, 1.0], vec![-0.5, 0.5], 1, 0).unwrap();
        p.noise = false;
        let mut gap = 2.0;
        for k in 1..=10 {
            p = dbm_coupled_evolve(&p, 0.1 * k as f64, 50).unwrap();
            let g = p.x[1] - p.x[0];
            assert!(g > gap);
            gap = g;
        }
        assert!((p.x[0] + p.x[1]).abs() < 1e-15);
    }

    #[test]
    fn translation_leaves_gaps_alone() {
        let x = goe_spectrum(30, 2);
        let y: Vec<f64> = x.iter().map(|v| v + 0.375).collect();
        let p = CoupledParticles::new(x, y, 1, 0).unwrap();
        assert!(gap_coupling_report(&p, 0.1).unwrap().max_scaled_gap_diff < 1e-12);
    }

    #[test]
    fn ordering_loss_is_reported() {
        let mut p = CoupledParticles::new(vec![0.0, 1e-300, 1.0], vec![0.0, 0.5, 1.0], 1, 0).unwrap();
        p.noise = false;
        match dbm_coupled_evolve(&p, 1.0, 1) {
            Err(Error::OrderingLost { halvings, .. }) => assert_eq!(halvings, 200),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn near_collision_is_refined_not_fatal() {
        let mut p = CoupledParticles::new(vec![0.0, 1e-9, 1.0], vec![0.0, 0.5, 1.0], 1, 0).unwrap();
        p.noise = false;
        let out = dbm_coupled_evolve(&p, 1.0, 1).unwrap();
        assert!(strictly_increasing(&out.x) && out.x[1] - out.x[0] > 0.1);
    }

    #[test]
    fn mean_position_is_driftless() {
        let x = goe_spectrum(20, 3);
        let mean0 = x.iter().sum::<f64>() / 20.0;
        let mut w = Welford::default();
        for k in 0..400u64 {
            let p = CoupledParticles::new(x.clone(), x.clone(), 1, k).unwrap();
            let out = dbm_coupled_evolve(&p, 0.05, 2000).unwrap();
            w.push(out.x.iter().sum::<f64>() / 20.0 - mean0);
        }
        assert!(w.mean.abs() < 4.0 * w.stderr());
    }

    #[test]
    fn trajectory_snapshots() {
        let x = goe_spectrum(10, 4);
        let y = goe_spectrum(10, 5);
        let p = CoupledParticles::new(x, y, 1, 1).unwrap();
        let snaps = dbm_trajectory(&p, &[0.001, 0.002]).unwrap();
        assert_eq!(snaps.len(), 3);
        assert_eq!(snaps[2].t, 0.002);
        let csv = trajectory_csv(&snaps);
        assert!(csv.starts_with("t,i,x_i,y_i\n"));
        assert_eq!(csv.lines().count(), 31);
        let again = dbm_trajectory(&p, &[0.001, 0.002]).unwrap();
        assert_eq!(trajectory_csv(&again), csv);
    }
}
