//! Maximal bulk gap: its normalized mean and its Gumbel-type fluctuations.

use serde::{Deserialize, Serialize};

use super::harness::{mc_run, HarnessOptions, RecordSink, RunSummary, TrialOutput, TrialRecord};
use crate::ensembles::{sample_matrix, Ensemble, Symmetry};
use crate::error::{invalid, Result};
use crate::gaps::{fit_gumbel_c2, gumbel_k_cdf, m_of_interval, t_hat_ell_raw, tau_star};
use crate::spectral::eigenvalues;
use crate::stats::ks_one_sample;

/// Settings for a maximal-gap run at one dimension.
#[derive(Debug, Clone)]
pub struct UniversalitySetup<'a> {
    pub interval: (f64, f64),
    /// Rank for the normalized statistic; `⌈N^{growth}⌉` when `ell_growth` is set.
    pub ell: usize,
    pub ell_growth: Option<f64>,
    /// Ranks `1..=k_max` for which `τ*_k` is recorded.
    pub k_max: u32,
    pub n_trials: u64,
    pub base_seed: u64,
    pub harness: &'a HarnessOptions,
}

impl UniversalitySetup<'_> {
    pub fn rank(&self, n: usize) -> usize {
        match self.ell_growth {
            Some(k) => ((n as f64).powf(k).ceil() as usize).max(1),
            None => self.ell,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxGapRow {
    pub n: usize,
    pub ell: usize,
    /// `M(I) = inf_I √(4 − x²)`.
    pub m: f64,
    pub scaled_mean: f64,
    pub scaled_sd: f64,
    pub scaled_stderr: f64,
    /// Set for real symmetric ensembles, whose limiting constant is not established.
    pub exploratory: bool,
}

/// Samples spectra and records `M N 𝒯̂_ℓ / √(32 log N)` and `τ*_k`, `k ≤ k_max`.
pub fn universality_run(
    ens: &Ensemble,
    setup: &UniversalitySetup,
    done: &[TrialRecord],
    sink: &mut dyn RecordSink,
) -> Result<(MaxGapRow, RunSummary)> {
    let n = ens.n();
    let (a, b) = setup.interval;
    let m = m_of_interval(a, b)?;
    if setup.k_max == 0 {
        return Err(invalid("k_max must be at least 1"));
    }
    let ell = setup.rank(n);
    let nf = n as f64;
    let norm = m * nf / (32.0 * nf.ln()).sqrt();
    let trial = |_t: u64, seed: u64| -> Result<TrialOutput> {
        let v = eigenvalues(&sample_matrix(ens, seed), false)?.lambda;
        let mut out = TrialOutput::default().with("scaled", norm * t_hat_ell_raw(&v, a, b, ell)?);
        for k in 1..=setup.k_max {
            let g = t_hat_ell_raw(&v, a, b, k as usize)?;
            out = out.with(&format!("tau_{k}"), tau_star(g, n, m));
        }
        Ok(out)
    };
    let sum = mc_run(n, setup.n_trials, setup.base_seed, setup.harness, done, trial, sink)?;
    let w = sum.stat("scaled");
    let row = MaxGapRow {
        n,
        ell,
        m,
        scaled_mean: w.mean,
        scaled_sd: w.sd(),
        scaled_stderr: w.stderr(),
        exploratory: ens.spec.symmetry == Symmetry::RealSymmetric,
    };
    Ok((row, sum))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GumbelFit {
    pub k: u32,
    pub samples: usize,
    pub fitted_c2: f64,
    pub ks_to_gumbel_k: f64,
}

/// Maximum-likelihood `c₂` within the Gumbel-k family and the KS distance to the fit.
pub fn gumbel_fit(tau: &[f64], k: u32) -> Result<GumbelFit> {
    let c2 = fit_gumbel_c2(tau, k)?;
    Ok(GumbelFit { k, samples: tau.len(), fitted_c2: c2, ks_to_gumbel_k: ks_one_sample(tau, |x| gumbel_k_cdf(x, k, c2)) })
}

/// `τ*_k` samples of a run and their Gumbel-k fit.
pub fn universality_fluctuations(sum: &RunSummary, k: u32) -> Result<(Vec<f64>, GumbelFit)> {
    let tau = sum.samples_of(&format!("tau_{k}")).to_vec();
    if tau.is_empty() {
        return Err(invalid(format!("run recorded no τ*_{k} samples")));
    }
    let fit = gumbel_fit(&tau, k)?;
    Ok((tau, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::EnsembleSpec;
    use crate::experiments::harness::NullSink;
    use crate::gaps::gumbel_k_sample;
    use crate::rng::stream;

    #[test]
    fn synthetic_gumbel_recovers_location() {
        let mut r = stream(42);
        let xs: Vec<f64> = (0..10_000).map(|_| gumbel_k_sample(1, 0.0, &mut r)).collect();
        let fit = gumbel_fit(&xs, 1).unwrap();
        assert!(fit.fitted_c2.abs() < 0.05, "{fit:?}");
        assert!(fit.ks_to_gumbel_k < 0.03, "{fit:?}");
        let ys: Vec<f64> = (0..10_000).map(|_| gumbel_k_sample(3, 1.5, &mut r)).collect();
        assert!((gumbel_fit(&ys, 3).unwrap().fitted_c2 - 1.5).abs() < 0.05);
    }

    #[test]
    fn second_gap_is_dominated_by_first() {
        let ens = EnsembleSpec::gue(200).build().unwrap();
        let h = HarnessOptions::default();
        let setup = UniversalitySetup {
            interval: (-1.0, 1.0),
            ell: 1,
            ell_growth: None,
            k_max: 2,
            n_trials: 40,
            base_seed: 3,
            harness: &h,
        };
        let (row, sum) = universality_run(&ens, &setup, &[], &mut NullSink).unwrap();
        assert!((row.m - 3f64.sqrt()).abs() < 1e-15);
        assert!(!row.exploratory);
        assert!(row.scaled_mean > 0.5 && row.scaled_mean < 1.3, "{row:?}");
        let (t1, t2) = (sum.samples_of("tau_1"), sum.samples_of("tau_2"));
        assert!(t1.iter().zip(t2).all(|(a, b)| a >= b));
        let (tau, fit) = universality_fluctuations(&sum, 1).unwrap();
        assert_eq!(tau.len(), 40);
        assert!(fit.fitted_c2.is_finite());
    }

    #[test]
    fn growing_rank() {
        let h = HarnessOptions::default();
        let s = UniversalitySetup {
            interval: (-1.0, 1.0),
            ell: 1,
            ell_growth: Some(0.05),
            k_max: 1,
            n_trials: 1,
            base_seed: 0,
            harness: &h,
        };
        assert_eq!(s.rank(1000), 2);
        assert_eq!(s.rank(1), 1);
    }
}
