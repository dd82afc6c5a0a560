//! Monte Carlo experiments driven by a single JSON configuration.

pub mod compare;
pub mod coupling;
pub mod harness;
pub mod testfn;
pub mod universality;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensembles::{EnsembleSpec, Symmetry};
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::gaps::{nu, GapSelector};
use crate::hsreg::{regularized_csv, tilde_lambdas, HSParams};
use crate::smoothmax::{f_ell, f_hat, CutoffSpec, RegularizationParams};
use crate::spectral::{
    delocalization_report, eigenvalues, local_law_sup, rigidity_report, SpectralDomainGrid,
};
use harness::{load_records, mc_run, HarnessOptions, NdjsonSink, RunSummary, TrialOutput, TrialRecord};
use testfn::TestFunctionSpec;

/// A time given outright or as a power of the dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeSpec {
    Absolute(f64),
    Power { n_power: f64 },
}

impl TimeSpec {
    pub fn at(&self, n: usize) -> f64 {
        match *self {
            TimeSpec::Absolute(t) => t,
            TimeSpec::Power { n_power } => (n as f64).powf(n_power),
        }
    }
}

/// Grid for the local-law supremum: energies in `e_range`, `η ∈ [N^δ/N, 10]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalLawSpec {
    pub delta: f64,
    #[serde(default = "default_e_range")]
    pub e_range: (f64, f64),
    #[serde(default = "default_grid_e")]
    pub n_e: usize,
    #[serde(default = "default_grid_eta")]
    pub n_eta: usize,
}

fn default_e_range() -> (f64, f64) {
    (-1.8, 1.8)
}
fn default_grid_e() -> usize {
    41
}
fn default_grid_eta() -> usize {
    16
}
fn default_alpha() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}
fn default_width_factor() -> f64 {
    2.0
}
fn default_flow_delta() -> f64 {
    0.05
}
fn default_k_max() -> u32 {
    1
}

/// What to run, with the parameters particular to each experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentKind {
    /// Spectra plus rigidity, delocalization and local-law diagnostics.
    Spectrum {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        local_law: Option<LocalLawSpec>,
        #[serde(default = "default_true")]
        vectors: bool,
        #[serde(default = "default_true")]
        write_spectra: bool,
    },
    /// `ν𝒯` (or `ν𝒯̂`) together with its smooth surrogate `F` (or `F̂`).
    Gaps,
    /// Regularized eigenvalues on the given indices (mid-bulk by default).
    Regularize {
        #[serde(default)]
        indices: Option<Vec<usize>>,
        #[serde(default = "default_true")]
        write_csv: bool,
    },
    /// Four-moment comparison of `ensemble` against `ensemble_b`.
    Compare,
    /// Single-entry swap between `ensemble` and `ensemble_b` against its Taylor prediction.
    Lindeberg { entry: (usize, usize) },
    /// Probability of an eigenvalue near a fixed bulk energy.
    Wegner {
        energy: f64,
        eps_w: f64,
        #[serde(default = "default_width_factor")]
        width_factor: f64,
        #[serde(default = "default_alpha")]
        kappa: f64,
    },
    /// `ν𝒯` at flow time 0 against time `t` of the matrix OU flow.
    Flow {
        t: TimeSpec,
        #[serde(default = "default_flow_delta")]
        delta: f64,
    },
    /// Coupled particle flows from `ensemble` and `ensemble_b` (default: the
    /// Gaussian ensemble of the same class).
    Coupling {
        times: Vec<TimeSpec>,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        trajectory_trials: u64,
    },
    /// Normalized maximal gap in the selector's interval and the Gumbel fit of `τ*_k`.
    Universality {
        #[serde(default = "default_k_max")]
        k_max: u32,
        #[serde(default)]
        ell_growth: Option<f64>,
    },
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Spectrum { .. } => "spectrum",
            ExperimentKind::Gaps => "gaps",
            ExperimentKind::Regularize { .. } => "regularize",
            ExperimentKind::Compare => "compare",
            ExperimentKind::Lindeberg { .. } => "lindeberg",
            ExperimentKind::Wegner { .. } => "wegner",
            ExperimentKind::Flow { .. } => "flow",
            ExperimentKind::Coupling { .. } => "coupling",
            ExperimentKind::Universality { .. } => "universality",
        }
    }
}

/// `β = N^γ` and `𝔞` for the smooth surrogates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegSpec {
    pub gamma: f64,
    #[serde(default)]
    pub frak_a: f64,
}

impl Default for RegSpec {
    fn default() -> Self {
        Self { gamma: 1.0, frak_a: 0.0 }
    }
}

fn default_hs() -> HSParams {
    HSParams::new(0.05, 0.5).expect("default HS parameters are valid")
}

fn default_selector() -> GapSelector {
    GapSelector::bulk(0.1)
}

fn default_ell() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_records")]
    pub records: String,
    #[serde(default = "default_summary")]
    pub summary: String,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_records() -> String {
    "records.ndjson".into()
}
fn default_summary() -> String {
    "summary.csv".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_out_dir(), records: default_records(), summary: default_summary() }
    }
}

/// The single document describing a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub ensemble_b: Option<EnsembleSpec>,
    #[serde(default = "default_selector")]
    pub selector: GapSelector,
    #[serde(default = "default_ell")]
    pub ell: usize,
    #[serde(default)]
    pub reg: RegSpec,
    #[serde(default = "default_hs")]
    pub hs: HSParams,
    #[serde(default)]
    pub cutoff: CutoffSpec,
    #[serde(default)]
    pub test_function: TestFunctionSpec,
    pub n_trials: u64,
    /// Dimensions to run; the ensemble's own `N` when empty.
    #[serde(default)]
    pub n_values: Vec<usize>,
    pub base_seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_values(&self) -> Vec<usize> {
        if self.n_values.is_empty() {
            vec![self.ensemble.n()]
        } else {
            self.n_values.clone()
        }
    }

    /// Second ensemble at dimension `n`, defaulting to the Gaussian ensemble of the same class.
    pub fn ensemble_b_at(&self, n: usize) -> Option<EnsembleSpec> {
        match (&self.ensemble_b, &self.experiment) {
            (Some(b), _) => Some(b.with_n(n)),
            (None, ExperimentKind::Coupling { .. }) => Some(match self.ensemble.symmetry {
                Symmetry::RealSymmetric => EnsembleSpec::goe(n),
                Symmetry::ComplexHermitian => EnsembleSpec::gue(n),
            }),
            _ => None,
        }
    }

    /// Checks everything that can be checked before sampling.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        };
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if self.ell == 0 {
            return Err(Error::Config("ell must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.test_function.validate().map_err(cfg_err)?;
        self.hs.validate().map_err(cfg_err)?;
        for n in self.n_values() {
            self.ensemble.with_n(n).build().map_err(cfg_err)?;
            self.selector.validate(n).map_err(cfg_err)?;
            RegularizationParams::for_n(n, self.reg.gamma, self.reg.frak_a).map_err(cfg_err)?;
            if let Some(b) = self.ensemble_b_at(n) {
                b.build().map_err(cfg_err)?;
            }
        }
        let needs_b = matches!(self.experiment, ExperimentKind::Compare | ExperimentKind::Lindeberg { .. });
        if needs_b && self.ensemble_b.is_none() {
            return Err(Error::Config(format!("{} needs ensemble_b", self.experiment.name())));
        }
        let is_interval = matches!(self.selector, GapSelector::Interval { .. });
        match &self.experiment {
            ExperimentKind::Universality { k_max, .. } => {
                if !is_interval {
                    return Err(Error::Config("universality needs an interval selector".into()));
                }
                if *k_max == 0 {
                    return Err(Error::Config("k_max must be at least 1".into()));
                }
            }
            ExperimentKind::Lindeberg { .. } if is_interval => {
                return Err(Error::Config("the entry-swap probe needs an index-set selector".into()));
            }
            ExperimentKind::Coupling { times, .. } if times.is_empty() => {
                return Err(Error::Config("coupling needs at least one checkpoint time".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Run-time switches that are not part of the configuration document.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
    pub override_gates: bool,
    /// Continue from an existing record log instead of starting afresh.
    pub resume: bool,
}

/// Outcome of a run: one summary row per dimension and the per-dimension
/// results in JSON form.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rows: Vec<BTreeMap<String, f64>>,
    pub results: Vec<serde_json::Value>,
    pub records_path: PathBuf,
    pub summary_path: PathBuf,
    pub results_path: PathBuf,
}

/// Indices `⌈0.4N⌉..=⌊0.6N⌋`.
pub fn mid_bulk_indices(n: usize) -> Vec<usize> {
    let nf = n as f64;
    ((0.4 * nf).ceil() as usize..=(0.6 * nf).floor() as usize).collect()
}

fn moments_row(row: &mut BTreeMap<String, f64>, sum: &RunSummary) {
    row.insert("trials".into(), sum.trials as f64);
    row.insert("failed".into(), sum.failed as f64);
    for (k, w) in &sum.stats {
        row.insert(format!("{k}_mean"), w.mean);
        row.insert(format!("{k}_sd"), w.sd());
        row.insert(format!("{k}_stderr"), w.stderr());
    }
}

fn struct_row<T: Serialize>(row: &mut BTreeMap<String, f64>, v: &T) -> Result<()> {
    if let serde_json::Value::Object(map) = serde_json::to_value(v)? {
        for (k, v) in map {
            if let Some(x) = v.as_f64() {
                row.insert(k, x);
            } else if let Some(b) = v.as_bool() {
                row.insert(k, if b { 1.0 } else { 0.0 });
            }
        }
    }
    Ok(())
}

/// Column-sorted CSV with `n` first; missing cells are empty.
pub fn summary_csv(rows: &[BTreeMap<String, f64>]) -> String {
    let mut cols: Vec<&String> = rows.iter().flat_map(|r| r.keys()).filter(|k| *k != "n").collect();
    cols.sort();
    cols.dedup();
    let mut out = String::from("n");
    for c in &cols {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.get("n").map(|&n| format!("{}", n as u64)).unwrap_or_default());
        for c in &cols {
            out.push(',');
            if let Some(v) = r.get(*c) {
                out.push_str(&fmt_f64(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// Splits resumed records into per-dimension prefixes, in configuration order.
fn split_done(records: Vec<TrialRecord>, ns: &[usize], n_trials: u64) -> Result<Vec<Vec<TrialRecord>>> {
    let mut out: Vec<Vec<TrialRecord>> = vec![Vec::new(); ns.len()];
    let mut slot = 0;
    for rec in records {
        while slot < ns.len() && (ns[slot] != rec.n || out[slot].len() as u64 == n_trials) {
            if (out[slot].len() as u64) < n_trials {
                return Err(Error::Config("record log does not match the configured dimensions".into()));
            }
            slot += 1;
        }
        if slot == ns.len() {
            return Err(Error::Config("record log holds more trials than configured".into()));
        }
        out[slot].push(rec);
    }
    Ok(out)
}

/// Executes the configured experiment, writing the record log, the summary
/// CSV, `results.json` and any side files into `opts.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let records_path = opts.out_dir.join(&cfg.outputs.records);
    let summary_path = opts.out_dir.join(&cfg.outputs.summary);
    let results_path = opts.out_dir.join("results.json");
    let ns = cfg.n_values();
    let done = if opts.resume {
        split_done(load_records(&records_path)?, &ns, cfg.n_trials)?
    } else {
        if records_path.exists() {
            std::fs::remove_file(&records_path)?;
        }
        vec![Vec::new(); ns.len()]
    };
    let mut sink = NdjsonSink::append(&records_path)?;
    let harness = HarnessOptions { workers: opts.workers.max(1), ..Default::default() };
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (n, done_n) in ns.iter().copied().zip(&done) {
        let (mut row, result) = run_one(cfg, n, opts, &harness, done_n, &mut sink)?;
        sink.flush()?;
        row.insert("n".into(), n as f64);
        rows.push(row);
        results.push(result);
    }
    sink.flush()?;
    std::fs::write(&summary_path, summary_csv(&rows))?;
    let mut json = serde_json::to_string_pretty(&results)?;
    json.push('\n');
    std::fs::write(&results_path, json)?;
    Ok(RunReport { rows, results, records_path, summary_path, results_path })
}

fn run_one(
    cfg: &ExperimentConfig,
    n: usize,
    opts: &RunOptions,
    harness: &HarnessOptions,
    done: &[TrialRecord],
    sink: &mut NdjsonSink,
) -> Result<(BTreeMap<String, f64>, serde_json::Value)> {
    let ens = cfg.ensemble.with_n(n).build()?;
    let ens_b = cfg.ensemble_b_at(n).map(|s| s.build()).transpose()?;
    let mut row = BTreeMap::new();
    let setup = compare::CompareSetup {
        selector: &cfg.selector,
        ell: cfg.ell,
        test_function: &cfg.test_function,
        n_trials: cfg.n_trials,
        base_seed: cfg.base_seed,
        harness,
    };
    let result = match &cfg.experiment {
        ExperimentKind::Spectrum { alpha, local_law, vectors, write_spectra } => {
            let grid = local_law
                .map(|l| SpectralDomainGrid::new(n, l.delta, l.e_range, l.n_e, l.n_eta))
                .transpose()?;
            let trial = |k: u64, seed: u64| -> Result<TrialOutput> {
                let s = eigenvalues(&ens.sample(seed), *vectors)?;
                let rig = rigidity_report(&s, *alpha)?;
                let mut out = TrialOutput::default()
                    .with("rigidity_max", rig.max_scaled_dev)
                    .with("rigidity_edge_adaptive_max", rig.edge_adaptive_max);
                if *vectors {
                    out = out.with("delocalization_max", delocalization_report(&s)?.max_scaled);
                }
                if let Some(g) = &grid {
                    out = out.with("local_law_sup", local_law_sup(&s, g)?);
                }
                if *write_spectra {
                    out.files.push((format!("spectrum_n{n}_trial{k}.csv"), s.to_csv()));
                }
                Ok(out)
            };
            let sum = mc_run(n, cfg.n_trials, cfg.base_seed, harness, done, trial, sink)?;
            moments_row(&mut row, &sum);
            serde_json::json!({ "n": n, "trials": sum.trials, "failed": sum.failed })
        }
        ExperimentKind::Gaps => {
            let reg = RegularizationParams::for_n(n, cfg.reg.gamma, cfg.reg.frak_a)?;
            let nu_n = nu(n)?;
            let trial = |_k: u64, seed: u64| -> Result<TrialOutput> {
                let v = eigenvalues(&ens.sample(seed), false)?.lambda;
                let stat = compare::scaled_gap_statistic(&v, &cfg.selector, cfg.ell)?;
                let f = match &cfg.selector {
                    GapSelector::IndexSet { .. } => f_ell(&v, &cfg.selector.indices(n)?, cfg.ell, &reg)?,
                    GapSelector::Interval { .. } => {
                        let (a, b) = cfg.selector.bounds()?;
                        f_hat(&v, a, b, cfg.ell, &reg, &cfg.cutoff)?
                    }
                };
                Ok(TrialOutput::default().with("nu_t", stat).with("f", f).with("abs_diff", (stat - f).abs()))
            };
            let sum = mc_run(n, cfg.n_trials, cfg.base_seed, harness, done, trial, sink)?;
            moments_row(&mut row, &sum);
            row.insert("nu".into(), nu_n);
            row.insert("beta".into(), reg.beta);
            row.insert("entropy_bound".into(), 2.0 * cfg.ell as f64 * (n as f64).ln() / reg.beta);
            serde_json::json!({ "n": n, "beta": reg.beta, "nu": nu_n, "trials": sum.trials, "failed": sum.failed })
        }
        ExperimentKind::Regularize { indices, write_csv } => {
            let idx = indices.clone().unwrap_or_else(|| mid_bulk_indices(n));
            let nf = n as f64;
            let trial = |k: u64, seed: u64| -> Result<TrialOutput> {
                let s = eigenvalues(&ens.sample(seed), false)?;
                let reg = tilde_lambdas(&s, &idx, &cfg.hs)?;
                let err = reg.iter().map(|r| (r.value - s.lambda[r.i - 1]).abs()).fold(0.0, f64::max);
                let quad = reg.iter().map(|r| r.quad_error_estimate).fold(0.0, f64::max);
                let mut out = TrialOutput::default()
                    .with("max_abs_err", err)
                    .with("max_scaled_err", nf * err)
                    .with("max_quad_err", quad);
                if *write_csv {
                    out.files.push((format!("regularized_n{n}_trial{k}.csv"), regularized_csv(&s, &reg)));
                }
                Ok(out)
            };
            let sum = mc_run(n, cfg.n_trials, cfg.base_seed, harness, done, trial, sink)?;
            moments_row(&mut row, &sum);
            let q95 = crate::stats::quantile(sum.samples_of("max_scaled_err"), 0.95);
            row.insert("max_scaled_err_q95".into(), q95);
            serde_json::json!({ "n": n, "indices": idx, "max_scaled_err_q95": q95, "trials": sum.trials, "failed": sum.failed })
        }
        ExperimentKind::Compare => {
            let b = ens_b.as_ref().expect("validated");
            let (res, sum) = compare::four_moment_compare(&ens, b, &setup, opts.override_gates, done, sink)?;
            moments_row(&mut row, &sum);
            struct_row(&mut row, &res)?;
            serde_json::to_value(&res)?
        }
        ExperimentKind::Lindeberg { entry } => {
            let b = ens_b.as_ref().expect("validated");
            let ls = compare::LindebergSetup {
                entry: *entry,
                reg: RegularizationParams::for_n(n, cfg.reg.gamma, cfg.reg.frak_a)?,
                compare: setup.clone(),
            };
            let (res, sum) = compare::lindeberg_taylor_probe(&ens, b, &ls, done, sink)?;
            moments_row(&mut row, &sum);
            struct_row(&mut row, &res)?;
            serde_json::to_value(&res)?
        }
        ExperimentKind::Wegner { energy, eps_w, width_factor, kappa } => {
            let (res, sum) = compare::wegner_probe(
                &ens, *energy, *eps_w, *width_factor, *kappa, cfg.n_trials, cfg.base_seed, harness, done, sink,
            )?;
            moments_row(&mut row, &sum);
            struct_row(&mut row, &res)?;
            serde_json::to_value(&res)?
        }
        ExperimentKind::Flow { t, delta } => {
            let (res, sum) = compare::flow_compare(&ens, t.at(n), *delta, &setup, opts.override_gates, done, sink)?;
            moments_row(&mut row, &sum);
            struct_row(&mut row, &res)?;
            serde_json::to_value(&res)?
        }
        ExperimentKind::Coupling { times, alpha, trajectory_trials } => {
            let b = ens_b.as_ref().expect("defaulted");
            let cs = coupling::CouplingSetup {
                times: times.iter().map(|t| t.at(n)).collect(),
                alpha: *alpha,
                n_trials: cfg.n_trials,
                base_seed: cfg.base_seed,
                trajectory_trials: *trajectory_trials,
                harness,
            };
            let (res, sum) = coupling::coupling_experiment(&ens, b, &cs, done, sink)?;
            moments_row(&mut row, &sum);
            row.insert("initial_median".into(), res.initial_median);
            row.insert("decay_exponent".into(), res.decay_exponent);
            for (j, r) in res.rows.iter().enumerate() {
                row.insert(format!("median_gap_diff_{}", j + 1), r.median_max_scaled_gap_diff);
                row.insert(format!("t_{}", j + 1), r.t);
            }
            serde_json::to_value(&res)?
        }
        ExperimentKind::Universality { k_max, ell_growth } => {
            let us = universality::UniversalitySetup {
                interval: cfg.selector.bounds()?,
                ell: cfg.ell,
                ell_growth: *ell_growth,
                k_max: *k_max,
                n_trials: cfg.n_trials,
                base_seed: cfg.base_seed,
                harness,
            };
            let (maxgap, sum) = universality::universality_run(&ens, &us, done, sink)?;
            moments_row(&mut row, &sum);
            struct_row(&mut row, &maxgap)?;
            let mut fits = Vec::new();
            for k in 1..=*k_max {
                let (_, fit) = universality::universality_fluctuations(&sum, k)?;
                row.insert(format!("fitted_c2_{k}"), fit.fitted_c2);
                row.insert(format!("ks_to_gumbel_{k}"), fit.ks_to_gumbel_k);
                fits.push(fit);
            }
            serde_json::json!({ "maxgap": maxgap, "fluctuations": fits })
        }
    };
    Ok((row, result))
}

/// Resolves the output directory: explicit flag, then environment, then configuration.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<&str>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| cfg.outputs.dir.clone())
}
