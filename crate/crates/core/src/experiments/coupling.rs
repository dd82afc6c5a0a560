//! Coupled Dyson Brownian motions started from two ensembles: decay of the
//! gap differences along a shared-noise trajectory.

use serde::{Deserialize, Serialize};

use super::harness::{mc_run, HarnessOptions, RecordSink, RunSummary, TrialOutput, TrialRecord};
use crate::dynamics::{dbm_trajectory, gap_coupling_report, trajectory_csv, CoupledParticles};
use crate::ensembles::{sample_matrix, Ensemble, Symmetry};
use crate::error::{invalid, Result};
use crate::rng::derive_seed;
use crate::spectral::eigenvalues;
use crate::stats::median;

#[derive(Debug, Clone)]
pub struct CouplingSetup<'a> {
    /// Strictly increasing positive checkpoint times.
    pub times: Vec<f64>,
    pub alpha: f64,
    pub n_trials: u64,
    pub base_seed: u64,
    /// The first this many trials also write their trajectory CSV.
    pub trajectory_trials: u64,
    pub harness: &'a HarnessOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub t: f64,
    /// `ω` with `t = N^ω / N`.
    pub omega: f64,
    pub median_max_scaled_gap_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingResult {
    pub n: usize,
    pub initial_median: f64,
    pub rows: Vec<CouplingRow>,
    /// Least-squares slope of `−log median` against `log t`.
    pub decay_exponent: f64,
}

/// Dyson index matching the symmetry class.
pub fn dyson_beta(sym: Symmetry) -> u32 {
    match sym {
        Symmetry::RealSymmetric => 1,
        Symmetry::ComplexHermitian => 2,
    }
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// `x(0) = λ(H)`, `y(0) = λ(G)` with `H` from `ens` and `G` from `reference`,
/// both driven by the same noise through every checkpoint.
pub fn coupling_experiment(
    ens: &Ensemble,
    reference: &Ensemble,
    setup: &CouplingSetup,
    done: &[TrialRecord],
    sink: &mut dyn RecordSink,
) -> Result<(CouplingResult, RunSummary)> {
    let n = ens.n();
    if reference.n() != n || reference.spec.symmetry != ens.spec.symmetry {
        return Err(invalid("coupled ensembles need the same dimension and symmetry class"));
    }
    if setup.times.is_empty() || setup.times[0] <= 0.0 || setup.times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("checkpoint times must be positive and strictly increasing"));
    }
    let beta = dyson_beta(ens.spec.symmetry);
    let trial = |k: u64, seed: u64| -> Result<TrialOutput> {
        let x = eigenvalues(&sample_matrix(ens, derive_seed(seed, &[0])), false)?.lambda;
        let y = eigenvalues(&sample_matrix(reference, derive_seed(seed, &[1])), false)?.lambda;
        let p = CoupledParticles::new(x, y, beta, derive_seed(seed, &[2]))?;
        let snaps = dbm_trajectory(&p, &setup.times)?;
        let mut out = TrialOutput::default();
        for (j, s) in snaps.iter().enumerate() {
            out = out.with(&format!("gap_diff_{j}"), gap_coupling_report(s, setup.alpha)?.max_scaled_gap_diff);
        }
        if k < setup.trajectory_trials {
            out.files.push((format!("trajectory_n{n}_trial{k}.csv"), trajectory_csv(&snaps)));
        }
        Ok(out)
    };
    let sum = mc_run(n, setup.n_trials, setup.base_seed, setup.harness, done, trial, sink)?;
    let ln_n = (n as f64).ln();
    let rows: Vec<CouplingRow> = setup
        .times
        .iter()
        .enumerate()
        .map(|(j, &t)| CouplingRow {
            t,
            omega: 1.0 + t.ln() / ln_n,
            median_max_scaled_gap_diff: median(sum.samples_of(&format!("gap_diff_{}", j + 1))),
        })
        .collect();
    let lt: Vec<f64> = rows.iter().map(|r| r.t.ln()).collect();
    let lm: Vec<f64> = rows.iter().map(|r| -r.median_max_scaled_gap_diff.ln()).collect();
    let res = CouplingResult {
        n,
        initial_median: median(sum.samples_of("gap_diff_0")),
        decay_exponent: if rows.len() > 1 { slope(&lt, &lm) } else { f64::NAN },
        rows,
    };
    Ok((res, sum))
}
