//! Experiment-grid execution: expands (regime × θ × q × rep × estimator)
//! cells, runs them with deterministic per-cell seeding, and persists a
//! canonical sorted record store with a config-fingerprinted manifest.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DveError, Result};
use crate::estimators::{estimate_all, EstimatorId};
use crate::population::build_population;
use crate::profile::ZipfSpec;
use crate::sampler::{self, derive_cell_seed, SampleSpec};

/// Exact header of the canonical record store.
pub const RECORDS_HEADER: &str =
    "N,A,theta,q,rep,seed,estimator,estimate,error,D_true,d_sample,n,gamma_sq_true,wall_time_us";

pub const RECORDS_FILE: &str = "records.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Measured per-estimate durations. Kept out of the canonical store so
/// that `records.csv` stays byte-identical across runs.
pub const TIMINGS_FILE: &str = "timings.csv";

const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// The full experiment grid: (N, A) regimes crossed with θ, q, and reps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// (population size, alphabet size) pairs, before scaling.
    pub regimes: Vec<(u64, u64)>,
    pub thetas: Vec<f64>,
    pub qs: Vec<f64>,
    pub reps: u32,
    pub master_seed: u64,
    pub estimators: BTreeSet<EstimatorId>,
    /// Desk-scale shrink factor applied to both N and A, preserving N/A.
    pub scale_divisor: u64,
}

/// The 20 regimes of the billion-row study grid, rows by N descending.
pub const FULL_REGIMES: [(u64, u64); 20] = [
    (1_000_000_000, 100_000_000),
    (1_000_000_000, 50_000_000),
    (1_000_000_000, 10_000_000),
    (1_000_000_000, 5_000_000),
    (1_000_000_000, 1_000_000),
    (100_000_000, 10_000_000),
    (100_000_000, 5_000_000),
    (100_000_000, 1_000_000),
    (100_000_000, 500_000),
    (100_000_000, 100_000),
    (10_000_000, 1_000_000),
    (10_000_000, 500_000),
    (10_000_000, 100_000),
    (10_000_000, 50_000),
    (10_000_000, 10_000),
    (1_000_000, 100_000),
    (1_000_000, 50_000),
    (1_000_000, 10_000),
    (1_000_000, 5_000),
    (1_000_000, 1_000),
];

/// Sampling-fraction grid. The study text lists the five percentages
/// {0.1, 1, 2, 5, 10}; its summary tables additionally band on q = 0.005,
/// so the union is used here (noted in the manifest).
pub const Q_GRID: [f64; 6] = [0.001, 0.005, 0.01, 0.02, 0.05, 0.1];

pub const THETA_GRID: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];

pub const PRESET_NAMES: [&str; 3] = ["paper-full", "paper-mini", "paper-1m-row"];

/// Resolve a named preset grid.
pub fn builtin_grid(preset: &str) -> Result<GridConfig> {
    let base = GridConfig {
        regimes: FULL_REGIMES.to_vec(),
        thetas: THETA_GRID.to_vec(),
        qs: Q_GRID.to_vec(),
        reps: 10,
        master_seed: 0,
        estimators: EstimatorId::ALL.into_iter().collect(),
        scale_divisor: 1,
    };
    match preset {
        "paper-full" => Ok(base),
        "paper-mini" => Ok(GridConfig { scale_divisor: 1000, ..base }),
        "paper-1m-row" => Ok(GridConfig {
            regimes: FULL_REGIMES
                .iter()
                .copied()
                .filter(|&(n, _)| n == 1_000_000)
                .collect(),
            ..base
        }),
        other => Err(DveError::UnknownPreset(other.to_string())),
    }
}

impl GridConfig {
    /// Regimes after applying the scale divisor.
    pub fn scaled_regimes(&self) -> Vec<(u64, u64)> {
        self.regimes
            .iter()
            .map(|&(n, a)| (n / self.scale_divisor, a / self.scale_divisor))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(DveError::InvalidSpec("reps must be >= 1".into()));
        }
        if self.scale_divisor < 1 {
            return Err(DveError::InvalidSpec("scale_divisor must be >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(DveError::InvalidSpec("estimator set is empty".into()));
        }
        for &q in &self.qs {
            if !(q > 0.0 && q <= 1.0) {
                return Err(DveError::InvalidSpec(format!("q must be in (0, 1], got {q}")));
            }
        }
        for (n, a) in self.scaled_regimes() {
            if a < 1 || n < a {
                return Err(DveError::InvalidSpec(format!(
                    "scaled regime ({n}, {a}) violates N >= A >= 1"
                )));
            }
        }
        Ok(())
    }

    /// Number of records a complete run produces (errors occupy records too).
    pub fn expected_records(&self) -> usize {
        self.regimes.len()
            * self.thetas.len()
            * self.qs.len()
            * self.reps as usize
            * self.estimators.len()
    }

    /// Stable hex fingerprint over the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One experiment: a single (cell, rep, estimator) observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub n_total: u64,
    pub alphabet: u64,
    pub theta: f64,
    pub q: f64,
    pub rep: u32,
    pub seed: u64,
    pub estimator: EstimatorId,
    /// `Ok(estimate)` or the stable error code.
    pub outcome: std::result::Result<f64, String>,
    pub d_true: u64,
    pub d_sample: u64,
    pub n_sample: u64,
    pub gamma_sq_true: f64,
    /// Measured estimation time. Not part of the canonical store.
    pub wall_time_us: u64,
}

impl EstimateRecord {
    fn sort_key(&self) -> (u64, u64, u64, u64, u32, usize) {
        let est_idx = EstimatorId::ALL.iter().position(|&e| e == self.estimator).unwrap();
        (
            self.n_total,
            self.alphabet,
            self.theta.to_bits(),
            self.q.to_bits(),
            self.rep,
            est_idx,
        )
    }

    fn csv_line(&self) -> String {
        let (estimate, error) = match &self.outcome {
            Ok(v) => (format!("{v}"), String::new()),
            Err(code) => (String::new(), code.clone()),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},0",
            self.n_total,
            self.alphabet,
            self.theta,
            self.q,
            self.rep,
            self.seed,
            self.estimator,
            estimate,
            error,
            self.d_true,
            self.d_sample,
            self.n_sample,
            self.gamma_sq_true,
        )
    }
}

/// Identifies one record independent of its outcome.
pub type RecordKey = (u64, u64, u64, u64, u32, EstimatorId);

pub fn record_key(
    n_total: u64,
    alphabet: u64,
    theta: f64,
    q: f64,
    rep: u32,
    estimator: EstimatorId,
) -> RecordKey {
    (n_total, alphabet, theta.to_bits(), q.to_bits(), rep, estimator)
}

/// Run the grid, returning records sorted canonically. Results are
/// identical for any parallelism level because seeds bind to cell
/// coordinates and records are sorted before use.
pub fn run_grid(config: &GridConfig, parallelism: usize) -> Result<Vec<EstimateRecord>> {
    run_grid_filtered(config, parallelism, None)
}

/// As [`run_grid`], restricted to the given record keys when present.
pub fn run_grid_filtered(
    config: &GridConfig,
    parallelism: usize,
    only: Option<&HashSet<RecordKey>>,
) -> Result<Vec<EstimateRecord>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| DveError::InvalidSpec(format!("thread pool: {e}")))?;

    // One work unit per (regime, theta); the population is built once and
    // shared by every sample drawn from it, then dropped.
    let mut pop_units: Vec<(u64, u64, f64)> = Vec::new();
    for (n, a) in config.scaled_regimes() {
        for &theta in &config.thetas {
            pop_units.push((n, a, theta));
        }
    }

    let estimators: Vec<EstimatorId> = config.estimators.iter().copied().collect();
    let records: Vec<EstimateRecord> = pool.install(|| {
        pop_units
            .par_iter()
            .map(|&(n, a, theta)| -> Result<Vec<EstimateRecord>> {
                let wanted: Vec<(f64, u32)> = config
                    .qs
                    .iter()
                    .flat_map(|&q| (0..config.reps).map(move |rep| (q, rep)))
                    .filter(|&(q, rep)| match only {
                        None => true,
                        Some(keys) => estimators
                            .iter()
                            .any(|&e| keys.contains(&record_key(n, a, theta, q, rep, e))),
                    })
                    .collect();
                if wanted.is_empty() {
                    return Ok(Vec::new());
                }
                let pop = build_population(ZipfSpec::new(n, a, theta)?)?;
                let d_true = pop.distinct();
                let gamma_sq_true = pop.gamma_sq();
                wanted
                    .par_iter()
                    .map(|&(q, rep)| -> Result<Vec<EstimateRecord>> {
                        let seed = derive_cell_seed(config.master_seed, n, a, theta, q, rep);
                        let profile = sampler::draw_sample(&pop, SampleSpec::new(q, seed)?)?;
                        let started = std::time::Instant::now();
                        let all = estimate_all(&profile, pop.total(), q);
                        let elapsed_us =
                            (started.elapsed().as_micros() as u64) / estimators.len().max(1) as u64;
                        let mut out = Vec::with_capacity(estimators.len());
                        for &id in &estimators {
                            if let Some(keys) = only {
                                if !keys.contains(&record_key(n, a, theta, q, rep, id)) {
                                    continue;
                                }
                            }
                            let outcome = match &all[&id] {
                                Ok(r) => Ok(r.estimate),
                                Err(e) => Err(e.code().to_string()),
                            };
                            out.push(EstimateRecord {
                                n_total: n,
                                alphabet: a,
                                theta,
                                q,
                                rep,
                                seed,
                                estimator: id,
                                outcome,
                                d_true,
                                d_sample: profile.d(),
                                n_sample: profile.n(),
                                gamma_sq_true,
                                wall_time_us: elapsed_us,
                            });
                        }
                        Ok(out)
                    })
                    .try_reduce(Vec::new, |mut acc, mut v| {
                        acc.append(&mut v);
                        Ok(acc)
                    })
            })
            .try_reduce(Vec::new, |mut acc, mut v| {
                acc.append(&mut v);
                Ok(acc)
            })
    })?;

    let mut records = records;
    records.sort_by_key(|r| r.sort_key());
    Ok(records)
}

/// Serialize records to the canonical CSV. The wall_time column is pinned
/// to zero here; measured timings go to the sidecar.
pub fn write_records_csv<W: Write>(records: &[EstimateRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{RECORDS_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

fn write_timings_csv<W: Write>(records: &[EstimateRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "N,A,theta,q,rep,estimator,wall_time_us")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.n_total, r.alphabet, r.theta, r.q, r.rep, r.estimator, r.wall_time_us
        )?;
    }
    Ok(())
}

/// Parse the canonical CSV back into records.
pub fn parse_records_csv(text: &str) -> Result<Vec<EstimateRecord>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line.trim() != RECORDS_HEADER {
                return Err(DveError::ConfigMismatch("unexpected records.csv header".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 14 {
            return Err(DveError::InvalidSpec(format!("bad record line {}", idx + 1)));
        }
        let bad = |what: &str| DveError::InvalidSpec(format!("bad {what} on line {}", idx + 1));
        let outcome = if fields[8].is_empty() {
            Ok(fields[7].parse::<f64>().map_err(|_| bad("estimate"))?)
        } else {
            Err(fields[8].to_string())
        };
        out.push(EstimateRecord {
            n_total: fields[0].parse().map_err(|_| bad("N"))?,
            alphabet: fields[1].parse().map_err(|_| bad("A"))?,
            theta: fields[2].parse().map_err(|_| bad("theta"))?,
            q: fields[3].parse().map_err(|_| bad("q"))?,
            rep: fields[4].parse().map_err(|_| bad("rep"))?,
            seed: fields[5].parse().map_err(|_| bad("seed"))?,
            estimator: fields[6].parse()?,
            outcome,
            d_true: fields[9].parse().map_err(|_| bad("D_true"))?,
            d_sample: fields[10].parse().map_err(|_| bad("d_sample"))?,
            n_sample: fields[11].parse().map_err(|_| bad("n"))?,
            gamma_sq_true: fields[12].parse().map_err(|_| bad("gamma_sq_true"))?,
            wall_time_us: 0,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GridConfig,
    pub fingerprint: String,
    pub generator: String,
    pub artifact_version: String,
    /// Why the q grid has six values where the protocol text lists five.
    pub q_note: String,
}

impl Manifest {
    pub fn new(config: &GridConfig) -> Self {
        Manifest {
            fingerprint: config.fingerprint(),
            config: config.clone(),
            generator: sampler::GENERATOR_ID.to_string(),
            artifact_version: ARTIFACT_VERSION.to_string(),
            q_note: "q grid is the union of the protocol's five percentages with 0.005, \
                     which the summary tables band on"
                .to_string(),
        }
    }
}

/// Persist records + manifest + timing sidecar into a directory.
pub fn write_store(dir: &Path, config: &GridConfig, records: &[EstimateRecord]) -> Result<()> {
    let io = |e: std::io::Error| DveError::InvalidSpec(format!("store I/O: {e}"));
    fs::create_dir_all(dir).map_err(io)?;
    let mut csv = Vec::new();
    write_records_csv(records, &mut csv).map_err(io)?;
    fs::write(dir.join(RECORDS_FILE), csv).map_err(io)?;
    let mut timings = Vec::new();
    write_timings_csv(records, &mut timings).map_err(io)?;
    fs::write(dir.join(TIMINGS_FILE), timings).map_err(io)?;
    let manifest = serde_json::to_string_pretty(&Manifest::new(config))
        .map_err(|e| DveError::InvalidSpec(format!("manifest: {e}")))?;
    fs::write(dir.join(MANIFEST_FILE), manifest).map_err(io)?;
    Ok(())
}

/// Load a record store directory.
pub fn read_store(dir: &Path) -> Result<(Manifest, Vec<EstimateRecord>)> {
    let io = |e: std::io::Error| DveError::InvalidSpec(format!("store I/O: {e}"));
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(io)?)
            .map_err(|e| DveError::ConfigMismatch(format!("manifest: {e}")))?;
    let records = parse_records_csv(&fs::read_to_string(dir.join(RECORDS_FILE)).map_err(io)?)?;
    Ok((manifest, records))
}

/// Complete a partial store: verify the fingerprint, compute only the
/// missing (cell, rep, estimator) records, and rewrite the sorted store.
/// The final store is identical to a fresh full run.
pub fn resume(config: &GridConfig, dir: &Path, parallelism: usize) -> Result<Vec<EstimateRecord>> {
    let (manifest, existing) = read_store(dir)?;
    if manifest.fingerprint != config.fingerprint() {
        return Err(DveError::ConfigMismatch(format!(
            "store fingerprint {} does not match config {}",
            manifest.fingerprint,
            config.fingerprint()
        )));
    }
    let have: HashSet<RecordKey> = existing
        .iter()
        .map(|r| record_key(r.n_total, r.alphabet, r.theta, r.q, r.rep, r.estimator))
        .collect();
    let mut missing = HashSet::new();
    for (n, a) in config.scaled_regimes() {
        for &theta in &config.thetas {
            for &q in &config.qs {
                for rep in 0..config.reps {
                    for &e in &config.estimators {
                        let key = record_key(n, a, theta, q, rep, e);
                        if !have.contains(&key) {
                            missing.insert(key);
                        }
                    }
                }
            }
        }
    }
    let mut records = existing;
    if !missing.is_empty() {
        let new = run_grid_filtered(config, parallelism, Some(&missing))?;
        records.extend(new);
    }
    records.sort_by_key(|r| r.sort_key());
    write_store(dir, config, &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        let full = builtin_grid("paper-full").unwrap();
        assert_eq!(full.expected_records(), 20 * 5 * 6 * 10 * 11);

        let row = builtin_grid("paper-1m-row").unwrap();
        assert_eq!(row.regimes.len(), 5);
        assert!(row.regimes.iter().all(|&(n, _)| n == 1_000_000));
        assert_eq!(
            row.regimes.iter().map(|&(_, a)| a).collect::<Vec<_>>(),
            vec![100_000, 50_000, 10_000, 5_000, 1_000]
        );

        let mini = builtin_grid("paper-mini").unwrap();
        for (n, a) in mini.scaled_regimes() {
            let ratio = n / a;
            assert!([10, 20, 100, 200, 1000].contains(&ratio), "N/A = {ratio}");
        }
        assert!(builtin_grid("nope").is_err());
    }

    #[test]
    fn fingerprint_tracks_config() {
        let a = builtin_grid("paper-mini").unwrap();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.master_seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    fn tiny_config() -> GridConfig {
        GridConfig {
            regimes: vec![(1000, 100), (1000, 50)],
            thetas: vec![0.0, 1.0],
            qs: vec![0.05, 1.0],
            reps: 2,
            master_seed: 42,
            estimators: EstimatorId::ALL.into_iter().collect(),
            scale_divisor: 1,
        }
    }

    #[test]
    fn full_sample_identity_records() {
        let mut config = tiny_config();
        config.qs = vec![1.0];
        config.reps = 1;
        let records = run_grid(&config, 1).unwrap();
        for r in &records {
            use EstimatorId::*;
            if matches!(r.estimator, Sh | Sh2 | Sh3 | Uj1 | Uj2 | Sj2 | Uj2a | Gee) {
                let est = *r.outcome.as_ref().unwrap();
                assert!(
                    (est - r.d_true as f64).abs() <= 1e-9 * r.d_true as f64,
                    "{} at q=1 returned {est}, D={}",
                    r.estimator,
                    r.d_true
                );
            }
        }
    }

    #[test]
    fn record_count_matches_grid_arithmetic() {
        let config = tiny_config();
        let records = run_grid(&config, 2).unwrap();
        assert_eq!(records.len(), config.expected_records());
    }

    #[test]
    fn parallelism_does_not_change_records() {
        let config = tiny_config();
        let a = run_grid(&config, 1).unwrap();
        let b = run_grid(&config, 4).unwrap();
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        write_records_csv(&a, &mut csv_a).unwrap();
        write_records_csv(&b, &mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn csv_round_trip() {
        let config = tiny_config();
        let records = run_grid(&config, 1).unwrap();
        let mut csv = Vec::new();
        write_records_csv(&records, &mut csv).unwrap();
        let parsed = parse_records_csv(std::str::from_utf8(&csv).unwrap()).unwrap();
        assert_eq!(parsed.len(), records.len());
        for (a, b) in records.iter().zip(&parsed) {
            assert_eq!(a.outcome, b.outcome);
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.estimator, b.estimator);
        }
    }

    #[test]
    fn resume_noop_on_complete_store() {
        let config = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let records = run_grid(&config, 1).unwrap();
        write_store(dir.path(), &config, &records).unwrap();
        let resumed = resume(&config, dir.path(), 1).unwrap();
        assert_eq!(strip_walltime(records), strip_walltime(resumed));
    }

    #[test]
    fn resume_fills_missing_cell() {
        let config = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let full = run_grid(&config, 1).unwrap();
        // Drop one whole cell's records.
        let partial: Vec<EstimateRecord> = full
            .iter()
            .filter(|r| !(r.alphabet == 50 && r.theta == 1.0 && r.rep == 1 && r.q == 0.05))
            .cloned()
            .collect();
        assert!(partial.len() < full.len());
        write_store(dir.path(), &config, &partial).unwrap();
        let resumed = resume(&config, dir.path(), 1).unwrap();
        assert_eq!(strip_walltime(full), strip_walltime(resumed));
    }

    #[test]
    fn resume_rejects_other_config() {
        let config = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let records = run_grid(&config, 1).unwrap();
        write_store(dir.path(), &config, &records).unwrap();
        let mut altered = config.clone();
        altered.master_seed = 7;
        assert!(matches!(
            resume(&altered, dir.path(), 1),
            Err(DveError::ConfigMismatch(_))
        ));
    }

    fn strip_walltime(mut records: Vec<EstimateRecord>) -> Vec<EstimateRecord> {
        for r in &mut records {
            r.wall_time_us = 0;
        }
        records
    }
}
