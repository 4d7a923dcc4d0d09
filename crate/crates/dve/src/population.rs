//! Deterministic materialization of Zipfian populations `Z_{A,θ}`.
//!
//! Probability masses `P(i) ∝ 1/i^θ` are apportioned over `N` rows with a
//! largest-remainder pass, so the population carries no sampling noise of
//! its own: all randomness lives in the sampling step. Classes apportioned
//! zero rows are dropped, which is why `D < A` at high skew.

use crate::error::{DveError, Result};
use crate::profile::{Population, ZipfSpec};

/// Normalized Zipfian probability masses for ranks `1..=A`.
#[derive(Debug, Clone)]
pub struct ZipfMasses {
    masses: Vec<f64>,
}

impl ZipfMasses {
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
}

/// Compute `P(i) = (1/i^θ) / H` with `H = Σ_{k=1..A} 1/k^θ`.
///
/// The harmonic sum is accumulated ascending with Kahan compensation for
/// large alphabets.
pub fn zipf_masses(alphabet: u64, theta: f64) -> ZipfMasses {
    let a = alphabet as usize;
    let mut weights = Vec::with_capacity(a);
    for i in 1..=a {
        weights.push((i as f64).powf(-theta));
    }
    let kahan = a > 1_000_000;
    let h = if kahan {
        let mut sum = 0.0f64;
        let mut c = 0.0f64;
        for &w in &weights {
            let y = w - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        sum
    } else {
        weights.iter().sum()
    };
    for w in &mut weights {
        *w /= h;
    }
    ZipfMasses { masses: weights }
}

/// Materialize the population for a spec by largest-remainder (Hamilton)
/// apportionment of `N` rows over the Zipf masses: floor every `N·P(i)`,
/// then hand the remaining rows to the largest fractional remainders,
/// ties broken toward lower rank. Zero-size classes are dropped.
pub fn build_population(spec: ZipfSpec) -> Result<Population> {
    if spec.n_total < spec.alphabet {
        return Err(DveError::InvalidSpec(format!(
            "N must be >= A (got N={}, A={})",
            spec.n_total, spec.alphabet
        )));
    }
    let masses = zipf_masses(spec.alphabet, spec.theta);
    let n = spec.n_total as f64;
    let mut sizes: Vec<u64> = Vec::with_capacity(masses.masses.len());
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(masses.masses.len());
    let mut assigned: u64 = 0;
    for (idx, &p) in masses.masses.iter().enumerate() {
        let target = n * p;
        let base = target.floor() as u64;
        sizes.push(base);
        assigned += base;
        fracs.push((idx, target - target.floor()));
    }
    let leftover = spec.n_total - assigned.min(spec.n_total);
    // Stable sort keeps lower ranks first among equal remainders.
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    for &(idx, _) in fracs.iter().take(leftover as usize) {
        sizes[idx] += 1;
    }
    sizes.retain(|&s| s > 0);
    // Float noise in the masses can leave a local inversion of one unit;
    // a final sort restores the non-increasing invariant.
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    Population::from_class_sizes(sizes, Some(spec))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masses_uniform_at_theta_zero() {
        let m = zipf_masses(4, 0.0);
        for &p in m.masses() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn masses_hand_evaluation() {
        // A=2, theta=1: H = 1.5, masses [2/3, 1/3].
        let m = zipf_masses(2, 1.0);
        assert!((m.masses()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.masses()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn masses_normalize_at_scale() {
        let m = zipf_masses(1_000_000, 2.0);
        let total: f64 = m.masses().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(m.masses().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn build_largest_remainder_rounding() {
        let pop = build_population(ZipfSpec::new(10, 4, 0.0).unwrap()).unwrap();
        assert_eq!(pop.class_sizes(), &[3, 3, 2, 2]);
        assert_eq!(pop.distinct(), 4);
    }

    #[test]
    fn build_exact_division() {
        let pop = build_population(ZipfSpec::new(100, 4, 0.0).unwrap()).unwrap();
        assert_eq!(pop.class_sizes(), &[25, 25, 25, 25]);
    }

    #[test]
    fn build_high_skew_drops_classes() {
        // With N/A = 10 and θ = 2 the deep tail gets fractional shares far
        // below the remainder-seat threshold, so classes drop out.
        let pop = build_population(ZipfSpec::new(10_000, 1000, 2.0).unwrap()).unwrap();
        assert!(pop.distinct() < 1000);
        assert_eq!(pop.total(), 10_000);
    }

    #[test]
    fn build_rejects_n_below_a() {
        assert!(ZipfSpec::new(5, 10, 0.0).is_err());
    }

    #[test]
    fn frequency_table_identities() {
        let pop = build_population(ZipfSpec::new(10, 4, 0.0).unwrap()).unwrap();
        let table = pop.frequency_table();
        assert_eq!(table.get(&3), Some(&2));
        assert_eq!(table.get(&2), Some(&2));
        let d: u64 = table.values().sum();
        let n: u64 = table.iter().map(|(i, f)| i * f).sum();
        assert_eq!(d, pop.distinct());
        assert_eq!(n, pop.total());
    }

    #[test]
    fn determinism_across_runs() {
        let spec = ZipfSpec::new(123_457, 997, 1.5).unwrap();
        let a = build_population(spec).unwrap();
        let b = build_population(spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_count_non_increasing_in_theta() {
        for (n, a) in [(10_000u64, 1000u64), (100_000, 500)] {
            let mut last = u64::MAX;
            for theta in [0.0, 0.5, 1.0, 1.5, 2.0] {
                let pop = build_population(ZipfSpec::new(n, a, theta).unwrap()).unwrap();
                assert!(pop.distinct() <= last, "D not monotone at theta={theta}");
                last = pop.distinct();
            }
        }
    }

    #[test]
    fn gamma_sq_matches_two_pass_oracle() {
        let pop = build_population(ZipfSpec::new(100_000, 500, 2.0).unwrap()).unwrap();
        // Brute-force oracle evaluated over the raw sizes.
        let sizes: Vec<f64> = pop.class_sizes().iter().map(|&s| s as f64).collect();
        let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
        let var = sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / sizes.len() as f64;
        let oracle = var / (mean * mean);
        assert!((pop.gamma_sq() - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }
}
