//! Sample-profile and population data model shared by every other module.
//!
//! A [`FrequencyProfile`] is the sparse frequency-of-frequencies map of a
//! sample: `f_i` counts the classes that occur exactly `i` times. A
//! [`Population`] is a materialized sequence of class sizes with exact
//! ground truth.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{DveError, Result};

/// Sparse frequency-of-frequencies map of a sample.
///
/// `freq_counts[i] = f_i` is the number of classes of size `i` in the
/// sample. Zero entries are never stored. The sample size `n = Σ i·f_i`
/// and distinct count `d = Σ f_i` are cached at construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyProfile {
    freq_counts: BTreeMap<u64, u64>,
    n: u64,
    d: u64,
}

impl FrequencyProfile {
    /// Build a profile directly from an `f_i` map. Zero counts are dropped.
    pub fn from_freq_counts(map: impl IntoIterator<Item = (u64, u64)>) -> Result<Self> {
        let mut freq_counts = BTreeMap::new();
        for (i, f) in map {
            if f == 0 {
                continue;
            }
            if i == 0 {
                return Err(DveError::InvalidSpec(
                    "frequency 0 cannot appear in a profile".into(),
                ));
            }
            *freq_counts.entry(i).or_insert(0) += f;
        }
        if freq_counts.is_empty() {
            return Err(DveError::EmptySample);
        }
        let n = freq_counts.iter().map(|(i, f)| i * f).sum();
        let d = freq_counts.values().sum();
        Ok(Self { freq_counts, n, d })
    }

    /// Build a profile from per-class sample counts `n_j`. Zero counts are
    /// ignored; an all-zero input is an error.
    pub fn from_counts(sample_class_counts: impl IntoIterator<Item = u64>) -> Result<Self> {
        let mut freq_counts: BTreeMap<u64, u64> = BTreeMap::new();
        for c in sample_class_counts {
            if c > 0 {
                *freq_counts.entry(c).or_insert(0) += 1;
            }
        }
        if freq_counts.is_empty() {
            return Err(DveError::EmptySample);
        }
        let n = freq_counts.iter().map(|(i, f)| i * f).sum();
        let d = freq_counts.values().sum();
        Ok(Self { freq_counts, n, d })
    }

    /// Build a profile by tallying a stream of opaque values.
    pub fn from_values<T: std::hash::Hash + Eq>(
        value_stream: impl IntoIterator<Item = T>,
    ) -> Result<Self> {
        let mut tally: std::collections::HashMap<T, u64> = std::collections::HashMap::new();
        for v in value_stream {
            *tally.entry(v).or_insert(0) += 1;
        }
        Self::from_counts(tally.into_values())
    }

    /// Sample size `n = Σ i·f_i`.
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Distinct classes in the sample, `d = Σ f_i`.
    pub fn d(&self) -> u64 {
        self.d
    }

    /// `f_i` for a given frequency, zero if absent.
    pub fn f(&self, i: u64) -> u64 {
        self.freq_counts.get(&i).copied().unwrap_or(0)
    }

    /// Iterate `(i, f_i)` pairs in ascending frequency order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.freq_counts.iter().map(|(&i, &f)| (i, f))
    }

    /// Largest frequency present in the sample.
    pub fn max_frequency(&self) -> u64 {
        *self.freq_counts.keys().next_back().expect("profile is non-empty")
    }

    /// Drop all classes with frequency above `c`, returning the reduced
    /// profile (if anything remains) and the number of removed classes.
    pub fn truncate_above(&self, c: u64) -> (Option<FrequencyProfile>, u64) {
        let kept: BTreeMap<u64, u64> = self
            .freq_counts
            .iter()
            .filter(|(&i, _)| i <= c)
            .map(|(&i, &f)| (i, f))
            .collect();
        let removed: u64 = self
            .freq_counts
            .iter()
            .filter(|(&i, _)| i > c)
            .map(|(_, &f)| f)
            .sum();
        if kept.is_empty() {
            (None, removed)
        } else {
            let n = kept.iter().map(|(i, f)| i * f).sum();
            let d = kept.values().sum();
            (Some(FrequencyProfile { freq_counts: kept, n, d }), removed)
        }
    }

    /// `Σ i(i−1)·f_i`, the second factorial moment used by the jackknife
    /// and Chao-Lee corrections.
    pub fn second_factorial_moment(&self) -> f64 {
        self.iter()
            .map(|(i, f)| (i as f64) * ((i - 1) as f64) * (f as f64))
            .sum()
    }

    /// Write the profile as a two-column CSV `frequency,count`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "frequency,count")?;
        for (i, f) in self.iter() {
            writeln!(w, "{},{}", i, f)?;
        }
        Ok(())
    }

    /// Parse the two-column CSV form.
    pub fn read_csv(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("frequency")) {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> Result<u64> {
                s.and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| DveError::InvalidSpec(format!("bad profile CSV line: {line}")))
            };
            let i = parse(parts.next())?;
            let f = parse(parts.next())?;
            map.insert(i, f);
        }
        Self::from_freq_counts(map)
    }

    /// JSON object form `{"freq_counts": {...}, "n": ..., "d": ...}`.
    pub fn to_json(&self) -> serde_json::Value {
        let counts: serde_json::Map<String, serde_json::Value> = self
            .iter()
            .map(|(i, f)| (i.to_string(), serde_json::Value::from(f)))
            .collect();
        serde_json::json!({ "freq_counts": counts, "n": self.n, "d": self.d })
    }
}

/// Parameters of a Zipfian population: `N` rows over an alphabet of `A`
/// classes with skew `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipfSpec {
    pub n_total: u64,
    pub alphabet: u64,
    pub theta: f64,
}

impl ZipfSpec {
    pub fn new(n_total: u64, alphabet: u64, theta: f64) -> Result<Self> {
        if alphabet < 1 {
            return Err(DveError::InvalidSpec("alphabet size must be >= 1".into()));
        }
        if n_total < alphabet {
            return Err(DveError::InvalidSpec(format!(
                "N must be >= A (got N={n_total}, A={alphabet})"
            )));
        }
        if !(theta >= 0.0) {
            return Err(DveError::InvalidSpec("theta must be >= 0".into()));
        }
        Ok(Self { n_total, alphabet, theta })
    }

    /// Average uniform class size `N/A`.
    pub fn avg_uniform_class_size(&self) -> f64 {
        self.n_total as f64 / self.alphabet as f64
    }
}

/// A materialized population: class sizes in non-increasing order with
/// exact totals. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    class_sizes: Vec<u64>,
    total: u64,
    pub meta: Option<ZipfSpec>,
}

impl Population {
    /// Build from explicit class sizes. Zero sizes are rejected; the
    /// sequence must be non-increasing.
    pub fn from_class_sizes(class_sizes: Vec<u64>, meta: Option<ZipfSpec>) -> Result<Self> {
        if class_sizes.is_empty() {
            return Err(DveError::InvalidSpec("population has no classes".into()));
        }
        if class_sizes.iter().any(|&s| s == 0) {
            return Err(DveError::InvalidSpec("class sizes must be >= 1".into()));
        }
        if class_sizes.windows(2).any(|w| w[0] < w[1]) {
            return Err(DveError::InvalidSpec("class sizes must be non-increasing".into()));
        }
        let total = class_sizes.iter().sum();
        Ok(Self { class_sizes, total, meta })
    }

    /// Number of rows `N`.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of distinct classes `D`.
    pub fn distinct(&self) -> u64 {
        self.class_sizes.len() as u64
    }

    /// Class sizes `N_j`, non-increasing.
    pub fn class_sizes(&self) -> &[u64] {
        &self.class_sizes
    }

    /// Squared coefficient of variation of class sizes,
    /// `γ² = (1/D)·Σ(N_j − N̄)² / N̄²`, computed with a two-pass
    /// mean-then-variance pass in double precision.
    pub fn gamma_sq(&self) -> f64 {
        let d = self.class_sizes.len() as f64;
        let mean = self.total as f64 / d;
        let var: f64 = self
            .class_sizes
            .iter()
            .map(|&s| {
                let dev = s as f64 - mean;
                dev * dev
            })
            .sum::<f64>()
            / d;
        var / (mean * mean)
    }

    /// Frequency-of-frequencies table of the population: size → `F_i`.
    pub fn frequency_table(&self) -> BTreeMap<u64, u64> {
        let mut table = BTreeMap::new();
        for &s in &self.class_sizes {
            *table.entry(s).or_insert(0u64) += 1;
        }
        table
    }

    /// The population's own profile, i.e. the sample at `q = 1`.
    pub fn full_profile(&self) -> FrequencyProfile {
        FrequencyProfile::from_freq_counts(self.frequency_table())
            .expect("population is non-empty")
    }

    /// Write class sizes as CSV `rank,size`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "rank,size")?;
        for (rank, &size) in self.class_sizes.iter().enumerate() {
            writeln!(w, "{},{}", rank + 1, size)?;
        }
        Ok(())
    }

    /// JSON sidecar with the summary numbers.
    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::json!({
            "N": self.total,
            "A": self.meta.map(|m| m.alphabet),
            "theta": self.meta.map(|m| m.theta),
            "D": self.distinct(),
            "gamma_sq": self.gamma_sq(),
        })
    }
}
