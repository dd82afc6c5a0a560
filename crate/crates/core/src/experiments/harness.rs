//! Seeded, order-preserving Monte Carlo driver with an append-only NDJSON record log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::stats::Welford;

/// One trial's outcome. Non-finite values are stored as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub values: BTreeMap<String, Option<f64>>,
}

impl TrialRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied().flatten()
    }
}

/// What a trial hands back: named statistics plus optional side files
/// (relative name, contents), written in trial order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialOutput {
    pub values: BTreeMap<String, f64>,
    pub files: Vec<(String, String)>,
}

impl TrialOutput {
    pub fn with(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.to_string(), v);
        self
    }
}

/// Per-dimension aggregate: streaming moments and, for distributional
/// comparisons, the raw samples in trial order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub n: usize,
    pub trials: usize,
    pub failed: usize,
    pub stats: BTreeMap<String, Welford>,
    pub samples: BTreeMap<String, Vec<f64>>,
}

impl RunSummary {
    fn absorb(&mut self, rec: &TrialRecord) {
        self.trials += 1;
        if !rec.ok() {
            self.failed += 1;
            return;
        }
        for (k, v) in &rec.values {
            if let Some(v) = v {
                self.stats.entry(k.clone()).or_default().push(*v);
                self.samples.entry(k.clone()).or_default().push(*v);
            }
        }
    }

    pub fn samples_of(&self, key: &str) -> &[f64] {
        self.samples.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn stat(&self, key: &str) -> Welford {
        self.stats.get(key).copied().unwrap_or_default()
    }
}

/// Where and how trials execute.
#[derive(Debug, Clone)]
pub struct HarnessOptions {
    pub workers: usize,
    /// Trials per parallel batch; only affects scheduling.
    pub batch: usize,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self { workers: 1, batch: 64 }
    }
}

/// Sink receiving records and side files in canonical order.
pub trait RecordSink {
    fn record(&mut self, rec: &TrialRecord) -> Result<()>;
    fn file(&mut self, _name: &str, _contents: &str) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl RecordSink for NullSink {
    fn record(&mut self, _rec: &TrialRecord) -> Result<()> {
        Ok(())
    }
}

/// Trial seed for `(base, N, trial)`.
pub fn trial_seed(base: u64, n: usize, trial: u64) -> u64 {
    derive_seed(base, &[n as u64, trial])
}

fn make_record(n: usize, trial: u64, seed: u64, res: Result<TrialOutput>) -> Result<(TrialRecord, Vec<(String, String)>)> {
    match res {
        Ok(out) => {
            let values = out.values.into_iter().map(|(k, v)| (k, v.is_finite().then_some(v))).collect();
            Ok((TrialRecord { n, trial, seed, error: None, values }, out.files))
        }
        Err(e) if e.is_numerical() => {
            Ok((TrialRecord { n, trial, seed, error: Some(e.to_string()), values: BTreeMap::new() }, Vec::new()))
        }
        Err(e) => Err(e),
    }
}

/// A completed trial and its side files.
type Finished = (TrialRecord, Vec<(String, String)>);

/// Runs trials `0..n_trials` for one dimension. Records already present in
/// `done` (a prefix, in order) are replayed instead of recomputed. Numerical
/// failures are logged and excluded; more than 1% of them fails the run.
pub fn mc_run<F>(
    n: usize,
    n_trials: u64,
    base_seed: u64,
    opts: &HarnessOptions,
    done: &[TrialRecord],
    trial_fn: F,
    sink: &mut dyn RecordSink,
) -> Result<RunSummary>
where
    F: Fn(u64, u64) -> Result<TrialOutput> + Sync,
{
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be at least 1".into()));
    }
    let mut summary = RunSummary { n, ..Default::default() };
    for (k, rec) in done.iter().enumerate() {
        if rec.n != n || rec.trial != k as u64 || rec.seed != trial_seed(base_seed, n, rec.trial) {
            return Err(Error::Config(format!("resumed record {k} does not belong to this run")));
        }
        summary.absorb(rec);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let batch = opts.batch.max(1) as u64;
    let mut start = done.len() as u64;
    while start < n_trials {
        let end = (start + batch).min(n_trials);
        let results: Vec<Result<Finished>> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|trial| {
                    let seed = trial_seed(base_seed, n, trial);
                    make_record(n, trial, seed, trial_fn(trial, seed))
                })
                .collect()
        });
        for r in results {
            let (rec, files) = r?;
            for (name, contents) in &files {
                sink.file(name, contents)?;
            }
            sink.record(&rec)?;
            summary.absorb(&rec);
        }
        start = end;
    }
    if summary.failed * 100 > summary.trials {
        return Err(Error::TooManyFailures { failed: summary.failed, total: summary.trials });
    }
    Ok(summary)
}

/// Appends records to an NDJSON file and side files next to it.
pub struct NdjsonSink {
    out: BufWriter<File>,
    dir: std::path::PathBuf,
    pub written: Vec<std::path::PathBuf>,
}

impl NdjsonSink {
    /// Opens `path` for appending (after [`load_records`] has trimmed it).
    pub fn append(path: &Path) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { out: BufWriter::new(f), dir, written: Vec::new() })
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

impl RecordSink for NdjsonSink {
    fn record(&mut self, rec: &TrialRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    fn file(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.dir.join(name);
        std::fs::write(&p, contents)?;
        self.written.push(p);
        Ok(())
    }
}

/// Reads the complete records of an existing log and truncates any torn
/// final line, so appending continues a well-formed file.
pub fn load_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let Ok(f) = File::open(path) else {
        return Ok(Vec::new());
    };
    let mut recs = Vec::new();
    let mut good_bytes = 0u64;
    for line in BufReader::new(f).split(b'\n') {
        let line = line?;
        match serde_json::from_slice::<TrialRecord>(&line) {
            Ok(r) => {
                recs.push(r);
                good_bytes += line.len() as u64 + 1;
            }
            Err(_) => break,
        }
    }
    let f = OpenOptions::new().write(true).open(path)?;
    f.set_len(good_bytes)?;
    Ok(recs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    struct Collect(Vec<TrialRecord>);

    impl RecordSink for Collect {
        fn record(&mut self, rec: &TrialRecord) -> Result<()> {
            self.0.push(rec.clone());
            Ok(())
        }
    }

    fn trial(_t: u64, seed: u64) -> Result<TrialOutput> {
        let mut r = stream(seed);
        let x: f64 = r.random();
        Ok(TrialOutput::default().with("x", x).with("x2", x * x))
    }

    #[test]
    fn single_trial_summary_is_the_record() {
        let mut c = Collect(vec![]);
        let s = mc_run(10, 1, 3, &HarnessOptions::default(), &[], trial, &mut c).unwrap();
        assert_eq!(s.trials, 1);
        assert_eq!(s.stat("x").mean, c.0[0].value("x").unwrap());
        assert_eq!(s.stat("x").variance(), 0.0);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let run = |w: usize, batch: usize| {
            let mut c = Collect(vec![]);
            let s = mc_run(10, 100, 9, &HarnessOptions { workers: w, batch }, &[], trial, &mut c).unwrap();
            (s, c.0)
        };
        let (a, ra) = run(1, 7);
        let (b, rb) = run(4, 64);
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.windows(2).all(|w| w[0].trial + 1 == w[1].trial));
    }

    #[test]
    fn failures_are_counted_and_bounded() {
        let flaky = |t: u64, s: u64| {
            if t == 5 {
                Err(Error::Numerical("boom".into()))
            } else {
                trial(t, s)
            }
        };
        let mut c = Collect(vec![]);
        let s = mc_run(10, 200, 1, &HarnessOptions::default(), &[], flaky, &mut c).unwrap();
        assert_eq!((s.trials, s.failed), (200, 1));
        assert_eq!(s.stat("x").count, 199);
        assert!(c.0[5].error.as_deref().unwrap().contains("boom"));
        let err = mc_run(10, 50, 1, &HarnessOptions::default(), &[], flaky, &mut NullSink).unwrap_err();
        assert!(matches!(err, Error::TooManyFailures { failed: 1, total: 50 }));
        let fatal = |_: u64, _: u64| -> Result<TrialOutput> { Err(Error::Precondition("no".into())) };
        assert!(matches!(mc_run(10, 5, 1, &HarnessOptions::default(), &[], fatal, &mut NullSink), Err(Error::Precondition(_))));
    }

    #[test]
    fn resume_from_log_reproduces_summary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.ndjson");
        let opts = HarnessOptions { workers: 2, batch: 8 };
        let full = {
            let mut s = NdjsonSink::append(&path).unwrap();
            let sum = mc_run(20, 40, 5, &opts, &[], trial, &mut s).unwrap();
            s.flush().unwrap();
            sum
        };
        let full_bytes = std::fs::read(&path).unwrap();
        // Simulate an interruption: keep 17 records and half of the 18th.
        let text = String::from_utf8(full_bytes.clone()).unwrap();
        let mut cut: usize = text.lines().take(17).map(|l| l.len() + 1).sum();
        cut += text.lines().nth(17).unwrap().len() / 2;
        std::fs::write(&path, &full_bytes[..cut]).unwrap();
        let done = load_records(&path).unwrap();
        assert_eq!(done.len(), 17);
        let mut s = NdjsonSink::append(&path).unwrap();
        let resumed = mc_run(20, 40, 5, &opts, &done, trial, &mut s).unwrap();
        s.flush().unwrap();
        assert_eq!(resumed, full);
        assert_eq!(std::fs::read(&path).unwrap(), full_bytes);
    }

    #[test]
    fn foreign_records_are_rejected() {
        let mut c = Collect(vec![]);
        mc_run(10, 3, 1, &HarnessOptions::default(), &[], trial, &mut c).unwrap();
        assert!(mc_run(10, 3, 2, &HarnessOptions::default(), &c.0, trial, &mut NullSink).is_err());
    }
}
