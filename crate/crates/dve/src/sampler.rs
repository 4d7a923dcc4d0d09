//! Sampling without replacement from a materialized population.
//!
//! A sample of size `n = round(q·N)` is drawn per-class via sequential
//! conditional hypergeometric draws: class `j` receives a univariate
//! hypergeometric draw given the remaining sample budget and remaining
//! population mass. This is O(D) per sample and never materializes the
//! `N` rows. The univariate draws use `rand_distr::Hypergeometric`
//! (exact inverse-transform / rejection sampling) driven by a ChaCha8
//! stream cipher generator.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Hypergeometric};

use crate::error::{DveError, Result};
use crate::profile::{FrequencyProfile, Population};

/// Identity string of the generator stack, recorded in run manifests.
pub const GENERATOR_ID: &str = "chacha8+rand_distr-hypergeometric";

/// Sampling fraction plus the seed for one draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub q: f64,
    pub seed: u64,
}

impl SampleSpec {
    pub fn new(q: f64, seed: u64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(DveError::InvalidSpec(format!("q must be in (0, 1], got {q}")));
        }
        Ok(Self { q, seed })
    }
}

/// Sample size for a fraction, `round(q·N)` with round-half-up.
pub fn sample_size(q: f64, n_total: u64) -> u64 {
    (q * n_total as f64 + 0.5).floor() as u64
}

/// Draw the per-class sample counts without replacement and return them.
///
/// The joint counts follow the multivariate hypergeometric law with
/// parameters `(N, {N_j}, n)`.
pub fn draw_sample_counts(pop: &Population, spec: SampleSpec) -> Result<Vec<u64>> {
    let n = sample_size(spec.q, pop.total());
    if n == 0 {
        return Err(DveError::EmptySample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut remaining_pop = pop.total();
    let mut remaining_sample = n;
    let mut counts = Vec::with_capacity(pop.class_sizes().len());
    for &size in pop.class_sizes() {
        if remaining_sample == 0 {
            counts.push(0);
            continue;
        }
        let k = if remaining_sample == remaining_pop {
            size
        } else {
            draw_hypergeometric(&mut rng, remaining_pop, size, remaining_sample)
        };
        counts.push(k);
        remaining_pop -= size;
        remaining_sample -= k;
    }
    debug_assert_eq!(remaining_sample, 0);
    Ok(counts)
}

/// Draw a sample and return its frequency profile. `Σ i·f_i = n` exactly.
pub fn draw_sample(pop: &Population, spec: SampleSpec) -> Result<FrequencyProfile> {
    let counts = draw_sample_counts(pop, spec)?;
    FrequencyProfile::from_counts(counts)
}

/// Below this mode, draws use the local log-space inverse transform.
/// `rand_distr` would pick its HIN inverse transform here too, but its
/// constructor evaluates a factorial fraction with an O(total) loop,
/// which is ruinous when the sequential sampler makes one draw per class.
const INVERSE_TRANSFORM_MODE: f64 = 20.0;

fn draw_hypergeometric(rng: &mut impl Rng, total: u64, successes: u64, draws: u64) -> u64 {
    // Degenerate cases short-circuit so the samplers below only see
    // proper parameters.
    if successes == 0 || draws == 0 {
        return 0;
    }
    if draws >= total {
        return successes;
    }
    // Normalize so the support starts at 0 and the "class" side is the
    // smaller parameter: HG(N, K, k) is exchangeable in (K, k), and the
    // complement identity X = K − Y with Y ~ HG(N, K, N − k) handles
    // K + k > N. Recursion depth is at most two.
    if successes > draws {
        return draw_hypergeometric(rng, total, draws, successes);
    }
    if successes + draws > total {
        return successes - draw_hypergeometric(rng, total, successes, total - draws);
    }
    let mode =
        (draws + 1) as f64 * (successes + 1) as f64 / (total + 2) as f64;
    if mode < INVERSE_TRANSFORM_MODE {
        return hypergeometric_inverse(rng, total, successes, draws);
    }
    // With the support normalized to start at 0 and mode >= 20, the
    // library always selects its O(1)-setup H2PE rejection sampler.
    match Hypergeometric::new(total, successes, draws) {
        Ok(dist) => dist.sample(rng),
        Err(_) => hypergeometric_inverse(rng, total, successes, draws),
    }
}

/// Exact inverse-transform hypergeometric draw, walking the pmf from 0 in
/// log space. O(successes) worst case, O(mode) expected; immune to the
/// `p(0)` underflow that breaks naive linear-space walks.
fn hypergeometric_inverse(rng: &mut impl Rng, total: u64, successes: u64, draws: u64) -> u64 {
    // ln p(0) = Σ_{j<K} ln((N−k−j)/(N−j)).
    let mut ln_p = 0.0f64;
    for j in 0..successes {
        ln_p += ((total - draws - j) as f64).ln() - ((total - j) as f64).ln();
    }
    let u: f64 = rng.gen();
    let mut cum = ln_p.exp();
    let mut x = 0u64;
    while cum < u && x < successes {
        // p(x+1)/p(x) = (K−x)(k−x) / ((x+1)(N−K−k+x+1)).
        ln_p += (((successes - x) * (draws - x)) as f64).ln()
            - (((x + 1) * (total - successes - draws + x + 1)) as f64).ln();
        x += 1;
        cum += ln_p.exp();
    }
    x
}

const SPLITMIX64_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX64_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a per-cell seed from the master seed and the cell coordinates.
///
/// Each coordinate is absorbed through a splitmix64 finalization round,
/// which gives deterministic, platform-independent, collision-resistant
/// mixing. Binding seeds to coordinates (not execution order) is what
/// makes parallel grid runs reproducible.
pub fn derive_cell_seed(
    master_seed: u64,
    n_total: u64,
    alphabet: u64,
    theta: f64,
    q: f64,
    rep: u32,
) -> u64 {
    let mut state = splitmix64(master_seed);
    for word in [n_total, alphabet, theta.to_bits(), q.to_bits(), rep as u64] {
        state = splitmix64(state ^ word);
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::build_population;
    use crate::profile::ZipfSpec;

    #[test]
    fn full_sample_equals_population_profile() {
        let pop = build_population(ZipfSpec::new(1000, 50, 1.0).unwrap()).unwrap();
        let profile = draw_sample(&pop, SampleSpec::new(1.0, 7).unwrap()).unwrap();
        assert_eq!(profile, pop.full_profile());
    }

    #[test]
    fn singleton_population_half_sample() {
        let pop = Population::from_class_sizes(vec![1, 1, 1, 1], None).unwrap();
        for seed in 0..20 {
            let profile = draw_sample(&pop, SampleSpec::new(0.5, seed).unwrap()).unwrap();
            assert_eq!(profile.f(1), 2);
            assert_eq!(profile.n(), 2);
        }
    }

    #[test]
    fn conservation_invariants() {
        let pop = build_population(ZipfSpec::new(10_000, 200, 1.5).unwrap()).unwrap();
        for q in [0.001, 0.01, 0.1, 0.5] {
            let profile = draw_sample(&pop, SampleSpec::new(q, 99).unwrap()).unwrap();
            assert_eq!(profile.n(), sample_size(q, pop.total()));
            assert!(profile.d() <= pop.distinct().min(profile.n()));
        }
    }

    #[test]
    fn hypergeometric_mean_monte_carlo() {
        // Classes [50,50], q=0.1 (n=10): mean count of class 1 is 5.
        let pop = Population::from_class_sizes(vec![50, 50], None).unwrap();
        let spec_q = 0.1;
        let reps = 10_000u64;
        let mut total = 0u64;
        for seed in 0..reps {
            let counts =
                draw_sample_counts(&pop, SampleSpec::new(spec_q, seed).unwrap()).unwrap();
            total += counts[0];
        }
        let mean = total as f64 / reps as f64;
        assert!((mean - 5.0).abs() < 0.1, "mean {mean} too far from 5.0");
    }

    #[test]
    fn zero_sized_sample_rejected() {
        let pop = Population::from_class_sizes(vec![100], None).unwrap();
        assert_eq!(
            draw_sample(&pop, SampleSpec::new(0.001, 0).unwrap()),
            Err(DveError::EmptySample)
        );
        assert!(SampleSpec::new(0.0, 0).is_err());
        assert!(SampleSpec::new(1.5, 0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let pop = build_population(ZipfSpec::new(5000, 100, 0.5).unwrap()).unwrap();
        let a = draw_sample(&pop, SampleSpec::new(0.05, 1234).unwrap()).unwrap();
        let b = draw_sample(&pop, SampleSpec::new(0.05, 1234).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cell_seed_determinism_and_sensitivity() {
        let a = derive_cell_seed(42, 1000, 100, 1.0, 0.01, 3);
        let b = derive_cell_seed(42, 1000, 100, 1.0, 0.01, 3);
        assert_eq!(a, b);
        assert_ne!(a, derive_cell_seed(42, 1000, 100, 1.0, 0.01, 4));
        assert_ne!(a, derive_cell_seed(43, 1000, 100, 1.0, 0.01, 3));
    }

    #[test]
    fn cell_seeds_collision_free_over_desk_grid() {
        // Full paper-mini-sized coordinate space.
        let mut seen = std::collections::HashSet::new();
        let mut master_42 = Vec::new();
        for n in [1_000u64, 10_000, 100_000, 1_000_000] {
            for div in [10u64, 20, 100, 500, 1000] {
                let a = n / div;
                for theta in [0.0, 0.5, 1.0, 1.5, 2.0] {
                    for q in [0.001, 0.005, 0.01, 0.02, 0.05, 0.1] {
                        for rep in 0..10 {
                            let s = derive_cell_seed(42, n, a, theta, q, rep);
                            assert!(seen.insert(s), "seed collision");
                            master_42.push(s);
                        }
                    }
                }
            }
        }
        // Changing the master seed changes every cell seed.
        let mut idx = 0;
        for n in [1_000u64, 10_000, 100_000, 1_000_000] {
            for div in [10u64, 20, 100, 500, 1000] {
                let a = n / div;
                for theta in [0.0, 0.5, 1.0, 1.5, 2.0] {
                    for q in [0.001, 0.005, 0.01, 0.02, 0.05, 0.1] {
                        for rep in 0..10 {
                            assert_ne!(master_42[idx], derive_cell_seed(43, n, a, theta, q, rep));
                            idx += 1;
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sample_size_rounds_half_up() {
        assert_eq!(sample_size(0.25, 10), 3); // 2.5 rounds up
        assert_eq!(sample_size(0.001, 1000), 1);
        assert_eq!(sample_size(1.0, 7), 7);
    }
}
