use wigner_core::experiments::{run_experiment, ExperimentConfig, RunOptions};
use wigner_core::gaps::{t_ell, GapSelector};
use wigner_core::smoothmax::{f_ell, RegularizationParams};
use wigner_core::spectral::{classical_locations, eigenvalues, rigidity_report};
use wigner_core::EnsembleSpec;

#[test]
fn sampled_spectrum_feeds_gap_statistics() {
    let n = 150;
    let ens = EnsembleSpec::gue(n).build().unwrap();
    let s = eigenvalues(&ens.sample(5), false).unwrap();
    assert!(s.lambda.windows(2).all(|w| w[0] < w[1]));
    assert!(s.lambda[0] > -2.6 && s.lambda[n - 1] < 2.6);
    let sel = GapSelector::bulk(0.1);
    let t1 = t_ell(&s.lambda, &sel, 1).unwrap();
    let t2 = t_ell(&s.lambda, &sel, 2).unwrap();
    assert!(t1 >= t2 && t2 > 0.0);
    let p = RegularizationParams::for_n(n, 1.0, 0.0).unwrap();
    let f = f_ell(&s.lambda, &sel.indices(n).unwrap(), 1, &p).unwrap();
    assert!((p.nu * t1 - f).abs() < 2.0 * (n as f64).ln() / p.beta);
    let rig = rigidity_report(&s, 0.1).unwrap();
    assert!(rig.max_scaled_dev.is_finite());
    assert_eq!(classical_locations(n).gamma.len(), n);
}

#[test]
fn configured_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_json(
        r#"{"experiment": {"kind": "regularize", "indices": [30, 31]},
            "ensemble": {"symmetry": "real_symmetric", "profile": {"kind": "flat_goe", "n": 60},
                         "offdiag_law": {"kind": "gaussian"}, "diag_law": {"kind": "gaussian"}},
            "n_trials": 3, "base_seed": 11}"#,
    )
    .unwrap();
    let opts = RunOptions { out_dir: dir.path().to_path_buf(), workers: 2, override_gates: false, resume: false };
    let report = run_experiment(&cfg, &opts).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0]["trials"], 3.0);
    let records = std::fs::read_to_string(&report.records_path).unwrap();
    assert_eq!(records.lines().count(), 3);
    let summary = std::fs::read_to_string(&report.summary_path).unwrap();
    assert!(summary.starts_with("n,"));
    for k in 0..3 {
        let csv = std::fs::read_to_string(dir.path().join(format!("regularized_n60_trial{k}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }
}
