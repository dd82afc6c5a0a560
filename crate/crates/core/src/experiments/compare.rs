//! Distributional comparisons: ensemble against ensemble, flow time against time
//! zero, single-entry swaps, and the level-repulsion (Wegner) probe.

use serde::{Deserialize, Serialize};

use super::harness::{mc_run, HarnessOptions, RecordSink, RunSummary, TrialOutput, TrialRecord};
use super::testfn::TestFunctionSpec;
use crate::dynamics::{ou_evolve, FlowState};
use crate::ensembles::{moment_mismatch, sample_matrix, Ensemble, LawKind, MatrixSample, Part, Symmetry};
use crate::error::{invalid, Error, Result};
use crate::gaps::{nu, t_ell, t_hat_ell, GapSelector};
use crate::hsreg::fd_entry_derivative;
use crate::quadrature::{gauss_hermite_normal, GaussLegendre};
use crate::rng::derive_seed;
use crate::smoothmax::{f_ell, RegularizationParams};
use crate::spectral::{eigenvalues, rho_sc};
use crate::stats::{ks_two_sample, ks_two_sample_pvalue, Welford};

/// Largest entry-moment discrepancy still counted as a match.
pub const MOMENT_MATCH_TOL: f64 = 1e-10;

/// `ν𝒯_ℓ` for an index-set selector, `ν𝒯̂_ℓ` for an interval.
pub fn scaled_gap_statistic(v: &[f64], sel: &GapSelector, ell: usize) -> Result<f64> {
    let t = match sel {
        GapSelector::IndexSet { .. } => t_ell(v, sel, ell)?,
        GapSelector::Interval { .. } => t_hat_ell(v, sel, ell)?,
    };
    Ok(nu(v.len())? * t)
}

fn statistic_of(m: &MatrixSample, sel: &GapSelector, ell: usize) -> Result<f64> {
    scaled_gap_statistic(&eigenvalues(m, false)?.lambda, sel, ell)
}

/// Settings shared by the comparison experiments.
#[derive(Debug, Clone)]
pub struct CompareSetup<'a> {
    pub selector: &'a GapSelector,
    pub ell: usize,
    pub test_function: &'a TestFunctionSpec,
    pub n_trials: u64,
    pub base_seed: u64,
    pub harness: &'a HarnessOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourMomentResult {
    /// `mean S(ν𝒯)` under A minus under B.
    pub mean_diff: f64,
    pub stderr: f64,
    pub ks_two_sample: f64,
    pub ks_pvalue: f64,
    pub mean_stat_a: f64,
    pub mean_stat_b: f64,
    pub moment_mismatch: f64,
    pub sup_norms: [f64; 6],
}

/// Refuses ensembles whose entry moments differ through fourth order.
pub fn moment_gate(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    let d = moment_mismatch(a, b)?;
    if d > MOMENT_MATCH_TOL {
        return Err(Error::Precondition(format!(
            "four-moment match failed (largest entry-moment difference {d:.3e})"
        )));
    }
    Ok(d)
}

/// Monte Carlo estimate of `E S(ν𝒯)` under two ensembles and the two-sample
/// KS distance between their raw statistics. Trial `k` samples A and B from
/// independent streams derived from the trial seed.
pub fn four_moment_compare(
    a: &Ensemble,
    b: &Ensemble,
    setup: &CompareSetup,
    override_gate: bool,
    done: &[TrialRecord],
    sink: &mut dyn RecordSink,
) -> Result<(FourMomentResult, RunSummary)> {
    let mismatch = match moment_gate(a, b) {
        Ok(d) => d,
        Err(_) if override_gate => moment_mismatch(a, b)?,
        Err(e) => return Err(e),
    };
    let n = a.n();
    setup.selector.validate(n)?;
    setup.test_function.validate()?;
    let sf = setup.test_function;
    let trial = |_t: u64, seed: u64| -> Result<TrialOutput> {
        let sa = statistic_of(&sample_matrix(a, derive_seed(seed, &[0])), setup.selector, setup.ell)?;
        let sb = statistic_of(&sample_matrix(b, derive_seed(seed, &[1])), setup.selector, setup.ell)?;
        Ok(TrialOutput::default()
            .with("stat_a", sa)
            .with("stat_b", sb)
            .with("s_a", sf.eval(sa, n))
            .with("s_b", sf.eval(sb, n)))
    };
    let sum = mc_run(n, setup.n_trials, setup.base_seed, setup.harness, done, trial, sink)?;
    let (wa, wb) = (sum.stat("s_a"), sum.stat("s_b"));
    let (xa, xb) = (sum.samples_of("stat_a"), sum.samples_of("stat_b"));
    let res = FourMomentResult {
        mean_diff: wa.mean - wb.mean,
        stderr: (wa.stderr().powi(2) + wb.stderr().powi(2)).sqrt(),
        ks_two_sample: ks_two_sample(xa, xb),
        ks_pvalue: ks_two_sample_pvalue(xa, xb),
        mean_stat_a: sum.stat("stat_a").mean,
        mean_stat_b: sum.stat("stat_b").mean,
        moment_mismatch: mismatch,
        sup_norms: sf.sup_norms(n),
    };
    Ok((res, sum))
}

/// Admissible flow times `(N^{−1+δ}, N^{−1/2−δ})`.
pub fn flow_window(n: usize, delta: f64) -> (f64, f64) {
    let nf = n as f64;
    (nf.powf(-1.0 + delta), nf.powf(-0.5 - delta))
}

pub fn flow_gate(n: usize, t: f64, delta: f64) -> Result<()> {
    let (lo, hi) = flow_window(n, delta);
    if t > lo && t < hi {
        Ok(())
    } else {
        Err(Error::Precondition(format!("flow time {t} outside ({lo}, {hi})")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowCompareResult {
    pub t: f64,
    pub ks: f64,
    pub ks_pvalue: f64,
    /// Mean paired difference `S(ν𝒯(t)) − S(ν𝒯(0))`.
    pub mean_diff: f64,
    pub stderr: f64,
    pub max_abs_paired_diff: f64,
    pub sup_norms: [f64; 6],
}

/// Compares `ν𝒯` at time 0 and at time `t` of the matrix OU flow, paired by trial.
#[allow(clippy::too_many_arguments)]
pub fn flow_compare(
    ens: &Ensemble,
    t: f64,
    delta: f64,
    setup: &CompareSetup,
    override_gate: bool,
    done: &[TrialRecord],
    sink: &mut dyn RecordSink,
) -> Result<(FlowCompareResult, RunSummary)> {
    let n = ens.n();
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid(format!("flow time must be finite and non-negative, got {t}")));
    }
    if !override_gate {
        flow_gate(n, t, delta)?;
    }
    setup.selector.validate(n)?;
    setup.test_function.validate()?;
    let sf = setup.test_function;
    let trial = |_k: u64, seed: u64| -> Result<TrialOutput> {
        let m = sample_matrix(ens, derive_seed(seed, &[0]));
        let s0 = statistic_of(&m, setup.selector, setup.ell)?;
        let state = ou_evolve(&FlowState::new(&m, ens, derive_seed(seed, &[1]))?, t)?;
        let st = statistic_of(&state.sample(), setup.selector, setup.ell)?;
        let (f0, ft) = (sf.eval(s0, n), sf.eval(st, n));
        Ok(TrialOutput::default()
            .with("stat_0", s0)
            .with("stat_t", st)
            .with("s_0", f0)
            .with("s_t", ft)
            .with("paired_diff", ft - f0))
    };
    let sum = mc_run(n, setup.n_trials, setup.base_seed, setup.harness, done, trial, sink)?;
    let d = sum.stat("paired_diff");
    let (x0, xt) = (sum.samples_of("stat_0"), sum.samples_of("stat_t"));
    let res = FlowCompareResult {
        t,
        ks: ks_two_sample(x0, xt),
        ks_pvalue: ks_two_sample_pvalue(x0, xt),
        mean_diff: d.mean,
        stderr: d.stderr(),
        max_abs_paired_diff: d.max.abs().max(d.min.abs()),
        sup_norms: sf.sup_norms(n),
    };
    Ok((res, sum))
}

/// Nodes and weights representing a unit-variance law exactly (discrete laws)
/// or by a high-order rule (continuous laws).
fn law_rule(kind: LawKind) -> (Vec<f64>, Vec<f64>) {
    let r3 = 3f64.sqrt();
    match kind {
        LawKind::Gaussian => gauss_hermite_normal(40),
        LawKind::ThreePoint => (vec![-r3, 0.0, r3], vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]),
        LawKind::TwoPointRademacher => (vec![-1.0, 1.0], vec![0.5, 0.5]),
        LawKind::Uniform => {
            let gl = GaussLegendre::new(40);
            gl.mapped(-r3, r3).map(|(x, w)| (x, w / (2.0 * r3))).unzip()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LindebergProbeResult {
    /// `E S_v − E S_w` for the swapped entry, averaged over the other entries.
    pub lhs: f64,
    pub lhs_stderr: f64,
    /// `Σ_{k≤4} g^{(k)}(0) (E vᵏ − E wᵏ) / k!` with finite-difference derivatives.
    pub taylor_rhs: f64,
    pub taylor_stderr: f64,
    pub residual: f64,
    /// Fraction of outer samples whose derivative estimates were flagged noisy.
    pub noisy_fraction: f64,
    pub moment_differences: [f64; 5],
}

/// Settings for [`lindeberg_taylor_probe`].
#[derive(Debug, Clone)]
pub struct LindebergSetup<'a> {
    pub entry: (usize, usize),
    pub reg: RegularizationParams,
    pub compare: CompareSetup<'a>,
}

/// Swaps the law of one off-diagonal entry of a real symmetric matrix. For each
/// outer sample the entry is set to zero, `g(x) = S(F_ℓ(λ(H + x(E_ab + E_ba))))`,
/// and both inner expectations are computed by exact (or Gaussian) quadrature.
pub fn lindeberg_taylor_probe(
    a: &Ensemble,
    b: &Ensemble,
    setup: &LindebergSetup,
    done: &[TrialRecord],
    sink: &mut dyn RecordSink,
) -> Result<(LindebergProbeResult, RunSummary)> {
    let n = a.n();
    if n > 60 {
        return Err(invalid(format!("the entry-swap probe is limited to N ≤ 60, got {n}")));
    }
    if b.n() != n {
        return Err(invalid("ensembles have different dimensions"));
    }
    if a.spec.symmetry != Symmetry::RealSymmetric || b.spec.symmetry != Symmetry::RealSymmetric {
        return Err(invalid("the entry-swap probe needs real symmetric ensembles"));
    }
    let (ea, eb) = setup.entry;
    if ea == eb || ea >= n || eb >= n {
        return Err(invalid(format!("entry ({ea}, {eb}) must be off-diagonal inside {n}×{n}")));
    }
    let c = &setup.compare;
    c.test_function.validate()?;
    let j = c.selector.indices(n)?;
    let sigma = a.profile.get(ea, eb).sqrt();
    if (b.profile.get(ea, eb).sqrt() - sigma).abs() > 1e-12 * sigma {
        return Err(invalid("the swapped entry must have the same variance under both ensembles"));
    }
    let (kv, kw) = (a.law(ea, eb).kind, b.law(ea, eb).kind);
    let mut dm = [0.0; 5];
    for (p, d) in dm.iter_mut().enumerate() {
        *d = (kv.moment(p as u32) - kw.moment(p as u32)) * sigma.powi(p as i32);
    }
    let (rv, rw) = (law_rule(kv), law_rule(kw));
    let reg = setup.reg;
    let ell = c.ell;
    let sf = c.test_function;
    let g = move |m: &MatrixSample| -> Result<f64> {
        let v = eigenvalues(m, false)?.lambda;
        Ok(sf.eval(f_ell(&v, &j, ell, &reg)?, n))
    };
    let trial = |_k: u64, seed: u64| -> Result<TrialOutput> {
        let base = sample_matrix(a, seed);
        let zero = MatrixSample { h: base.h.theta_scaled(ea, eb, 0.0), seed, spec_id: base.spec_id.clone() };
        let at = |x: f64| -> Result<MatrixSample> {
            Ok(MatrixSample { h: zero.h.perturbed(ea, eb, Part::Re, x)?, seed, spec_id: zero.spec_id.clone() })
        };
        let expect = |(xs, ws): &(Vec<f64>, Vec<f64>)| -> Result<f64> {
            xs.iter().zip(ws).map(|(&x, &w)| Ok(w * g(&at(sigma * x)?)?)).sum()
        };
        let lhs = expect(&rv)? - expect(&rw)?;
        let d1 = fd_entry_derivative(&g, &zero, (ea, eb), Part::Re, 1, 1.0)?;
        let d2 = fd_entry_derivative(&g, &zero, (ea, eb), Part::Re, 2, 1.0)?;
        // Third and fourth derivatives by differencing the second derivative.
        let h = 0.25 * sigma;
        let d2p = fd_entry_derivative(&g, &at(h)?, (ea, eb), Part::Re, 2, 1.0)?;
        let d2m = fd_entry_derivative(&g, &at(-h)?, (ea, eb), Part::Re, 2, 1.0)?;
        let d3 = (d2p.value - d2m.value) / (2.0 * h);
        let d4 = (d2p.value - 2.0 * d2.value + d2m.value) / (h * h);
        let rhs = d1.value * dm[1] + d2.value * dm[2] / 2.0 + d3 * dm[3] / 6.0 + d4 * dm[4] / 24.0;
        let noisy = [d1, d2, d2p, d2m].iter().any(|d| d.noisy);
        Ok(TrialOutput::default()
            .with("lhs", lhs)
            .with("taylor_rhs", rhs)
            .with("residual", lhs - rhs)
            .with("noisy", if noisy { 1.0 } else { 0.0 }))
    };
    let sum = mc_run(n, c.n_trials, c.base_seed, c.harness, done, trial, sink)?;
    let (l, r) = (sum.stat("lhs"), sum.stat("taylor_rhs"));
    let res = LindebergProbeResult {
        lhs: l.mean,
        lhs_stderr: l.stderr(),
        taylor_rhs: r.mean,
        taylor_stderr: r.stderr(),
        residual: sum.stat("residual").mean,
        noisy_fraction: sum.stat("noisy").mean,
        moment_differences: dm,
    };
    Ok((res, sum))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WegnerResult {
    pub empirical_prob: f64,
    pub stderr: f64,
    /// First-order count `2cρ_sc(E)N^{−ε_w}` of eigenvalues in the window.
    pub expected_count: f64,
    pub half_width: f64,
}

/// Frequency of an eigenvalue within `c·N^{−1−ε_w}` of `E` (`c = 2` by default).
#[allow(clippy::too_many_arguments)]
pub fn wegner_probe(
    ens: &Ensemble,
    e: f64,
    eps_w: f64,
    width_factor: f64,
    kappa: f64,
    n_trials: u64,
    base_seed: u64,
    harness: &HarnessOptions,
    done: &[TrialRecord],
    sink: &mut dyn RecordSink,
) -> Result<(WegnerResult, RunSummary)> {
    if !(kappa > 0.0 && e > -2.0 + kappa && e < 2.0 - kappa) {
        return Err(invalid(format!("energy {e} must lie in (−2 + κ, 2 − κ) with κ = {kappa} > 0")));
    }
    if !(width_factor >= 0.0 && eps_w.is_finite()) {
        return Err(invalid("window needs a non-negative width factor and finite ε_w"));
    }
    let n = ens.n();
    let nf = n as f64;
    let half_width = width_factor * nf.powf(-1.0 - eps_w);
    let trial = |_k: u64, seed: u64| -> Result<TrialOutput> {
        let v = eigenvalues(&sample_matrix(ens, seed), false)?.lambda;
        let hit = half_width > 0.0 && v.iter().any(|&x| (x - e).abs() <= half_width);
        Ok(TrialOutput::default().with("hit", if hit { 1.0 } else { 0.0 }))
    };
    let sum = mc_run(n, n_trials, base_seed, harness, done, trial, sink)?;
    let w: Welford = sum.stat("hit");
    let res = WegnerResult {
        empirical_prob: w.mean,
        stderr: w.stderr(),
        expected_count: 2.0 * half_width * nf * rho_sc(e),
        half_width,
    };
    Ok((res, sum))
}
